//! Statistics over successful attacks: Pearson correlations between joint
//! displacements and the original motion's dynamics, and joint-wise
//! deviation statistics.
//!
//! Series are pooled over frames and samples into one long series per joint.
//! Speed and acceleration are Euclidean norms of the original's first and
//! second forward differences; they are paired with the displacement at the
//! frame where the difference starts.

use serde::{Deserialize, Serialize};

use crate::attack::AttackResult;
use crate::error::{Error, Result};
use crate::motion::Motion;
use crate::skeleton::{distance, norm};

/// Square correlation matrix; `None` marks a cell where one of the series
/// has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix(pub Vec<Vec<Option<f64>>>);

impl CorrelationMatrix {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.0[row][col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.0[row][col].is_some()
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub joint_names: Vec<String>,
    /// Displacement of joint j vs displacement of joint k.
    pub disp_disp: CorrelationMatrix,
    /// Displacement of joint j vs original speed of joint k.
    pub disp_speed: CorrelationMatrix,
    /// Displacement of joint j vs original acceleration of joint k.
    pub disp_accel: CorrelationMatrix,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub joint_names: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// `series[j][t] = |adv_t[j] - orig_t[j]|`.
pub fn joint_displacement_series(result: &AttackResult) -> Result<Vec<Vec<f64>>> {
    if !result.success {
        return Err(Error::Validation("displacement series of an unsuccessful attack".into()));
    }
    let m = &result.adversarial_motion;
    let (frames, joints) = (m.frame_count(), m.joint_count());
    let mut series = vec![vec![0.0; frames]; joints];
    for (i, d) in result.displacement.iter().enumerate() {
        series[i % joints][i / joints] = norm(*d);
    }
    Ok(series)
}

/// Per-joint norms of the `order`-th forward difference (order 1 or 2).
fn dynamics_series(m: &Motion, order: usize) -> Vec<Vec<f64>> {
    let (frames, joints) = (m.frame_count(), m.joint_count());
    let mut out = vec![Vec::with_capacity(frames.saturating_sub(order)); joints];
    for t in 0..frames.saturating_sub(order) {
        for (j, s) in out.iter_mut().enumerate() {
            let a = m.frame(t)[j];
            let b = m.frame(t + 1)[j];
            let v = if order == 1 {
                distance(b, a)
            } else {
                let c = m.frame(t + 2)[j];
                norm([c[0] - 2.0 * b[0] + a[0], c[1] - 2.0 * b[1] + a[1], c[2] - 2.0 * b[2] + a[2]])
            };
            s.push(v);
        }
    }
    out
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Two-pass Pearson correlation, `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson series lengths differ");
    if x.len() < 2 || is_constant(x) || is_constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn matrix(rows: &[Vec<f64>], cols: &[Vec<f64>], symmetric: bool) -> CorrelationMatrix {
    let n = rows.len();
    let mut out = vec![vec![None; cols.len()]; n];
    for j in 0..n {
        for k in 0..cols.len() {
            if symmetric && k < j {
                out[j][k] = out[k][j];
            } else if symmetric && k == j {
                out[j][k] = (!is_constant(&rows[j])).then_some(1.0);
            } else {
                out[j][k] = pearson(&rows[j], &cols[k]);
            }
        }
    }
    CorrelationMatrix(out)
}

fn successes<'a>(results: &'a [AttackResult], originals: &'a [Motion]) -> Result<Vec<(&'a AttackResult, &'a Motion)>> {
    if results.len() != originals.len() {
        return Err(Error::Dimension(format!(
            "{} results for {} originals",
            results.len(),
            originals.len()
        )));
    }
    let pairs: Vec<_> = results.iter().zip(originals).filter(|(r, _)| r.success).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no successful attacks".into()));
    }
    for (r, o) in &pairs {
        if !r.adversarial_motion.same_shape(o) {
            return Err(Error::Dimension("result and original differ in shape".into()));
        }
    }
    Ok(pairs)
}

/// Correlation matrices over the successful results in `results`, which is
/// parallel to `originals`.
pub fn correlation_report(results: &[AttackResult], originals: &[Motion]) -> Result<CorrelationReport> {
    let pairs = successes(results, originals)?;
    let joints = pairs[0].1.joint_count();
    let mut disp = vec![Vec::new(); joints];
    let mut disp_v = vec![Vec::new(); joints];
    let mut disp_a = vec![Vec::new(); joints];
    let mut speed = vec![Vec::new(); joints];
    let mut accel = vec![Vec::new(); joints];
    for (r, o) in &pairs {
        let series = joint_displacement_series(r)?;
        let v = dynamics_series(o, 1);
        let a = dynamics_series(o, 2);
        for j in 0..joints {
            let frames = series[j].len();
            disp[j].extend_from_slice(&series[j]);
            disp_v[j].extend_from_slice(&series[j][..frames - 1]);
            disp_a[j].extend_from_slice(&series[j][..frames.saturating_sub(2)]);
            speed[j].extend_from_slice(&v[j]);
            accel[j].extend_from_slice(&a[j]);
        }
    }
    if disp_a[0].len() < 2 {
        return Err(Error::EmptyInput("fewer than two pooled time samples".into()));
    }
    Ok(CorrelationReport {
        joint_names: pairs[0].1.topology().joint_names().to_vec(),
        disp_disp: matrix(&disp, &disp, true),
        disp_speed: matrix(&disp_v, &speed, false),
        disp_accel: matrix(&disp_a, &accel, false),
        sample_count: pairs.len(),
    })
}

/// `correlation_report` restricted to results whose original label is
/// `class`.
pub fn correlation_report_for_class(
    results: &[AttackResult],
    originals: &[Motion],
    class: usize,
) -> Result<CorrelationReport> {
    if results.len() != originals.len() {
        return Err(Error::Dimension(format!(
            "{} results for {} originals",
            results.len(),
            originals.len()
        )));
    }
    let (r, o): (Vec<AttackResult>, Vec<Motion>) = results
        .iter()
        .zip(originals)
        .filter(|(r, _)| r.original_label == class)
        .map(|(r, o)| (r.clone(), o.clone()))
        .unzip();
    correlation_report(&r, &o)
}

/// Per-joint mean and population standard deviation of displacement
/// magnitudes, pooled over frames and successful results.
pub fn deviation_stats(results: &[AttackResult]) -> Result<DeviationStats> {
    let ok: Vec<&AttackResult> = results.iter().filter(|r| r.success).collect();
    let first = ok
        .first()
        .ok_or_else(|| Error::EmptyInput("no successful attacks".into()))?;
    let joints = first.adversarial_motion.joint_count();
    let mut pooled = vec![Vec::new(); joints];
    for r in &ok {
        if r.adversarial_motion.joint_count() != joints {
            return Err(Error::Dimension("results differ in joint count".into()));
        }
        for (j, s) in joint_displacement_series(r)?.into_iter().enumerate() {
            pooled[j].extend(s);
        }
    }
    let mut mean = Vec::with_capacity(joints);
    let mut std = Vec::with_capacity(joints);
    for s in &pooled {
        let n = s.len() as f64;
        let mu = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        mean.push(mu);
        std.push(var.sqrt());
    }
    Ok(DeviationStats {
        joint_names: first.adversarial_motion.topology().joint_names().to_vec(),
        mean,
        std,
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}

/// Matrix as CSV: header of joint names, one row per joint, invalid cells
/// empty.
pub fn matrix_csv(m: &CorrelationMatrix, joint_names: &[String]) -> Result<String> {
    let mut w = csv_writer();
    let header: Vec<&str> = std::iter::once("joint").chain(joint_names.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in joint_names.iter().zip(&m.0) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

pub fn stats_csv(stats: &DeviationStats) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["joint", "name", "mean", "std"]).map_err(csv_err)?;
    for (j, name) in stats.joint_names.iter().enumerate() {
        w.write_record([j.to_string(), name.clone(), stats.mean[j].to_string(), stats.std[j].to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackStrategy;
    use crate::skeleton::{forward_kinematics, JointAngleTrack, SkeletonTopology, JOINT_COUNT};

    fn original(frames: usize) -> Motion {
        let mut track = JointAngleTrack::rest(frames);
        for (t, f) in track.angles.iter_mut().enumerate() {
            f[7] = [0.3 * (t as f64 * 0.7).sin(), 0.0, 0.2 * t as f64];
        }
        forward_kinematics(&track, &SkeletonTopology::standard(), 30.0).unwrap()
    }

    fn result_with(orig: &Motion, displacement: Vec<[f64; 3]>, success: bool) -> AttackResult {
        let coords: Vec<[f64; 3]> = orig
            .coords()
            .iter()
            .zip(&displacement)
            .map(|(c, d)| [c[0] + d[0], c[1] + d[1], c[2] + d[2]])
            .collect();
        AttackResult {
            strategy: AttackStrategy::AnythingBut,
            success,
            iterations_used: 1,
            iterations_run: 1,
            original_label: 0,
            adversarial_motion: orig.with_coords(coords).unwrap(),
            final_label: 1,
            final_probs: vec![0.0, 1.0],
            final_classification_loss: 0.0,
            final_perceptual_loss: 0.0,
            final_total_loss: 0.0,
            displacement,
            history: None,
        }
    }

    #[test]
    fn three_four_five() {
        let m = original(4);
        let mut d = vec![[0.0; 3]; 4 * JOINT_COUNT];
        d[2 * JOINT_COUNT + 6] = [3.0, 4.0, 0.0];
        let s = joint_displacement_series(&result_with(&m, d, true)).unwrap();
        assert_eq!(s[6][2], 5.0);
        let total: f64 = s.iter().flatten().sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn unsuccessful_rejected() {
        let m = original(4);
        let r = result_with(&m, vec![[0.0; 3]; 4 * JOINT_COUNT], false);
        assert!(joint_displacement_series(&r).is_err());
        assert!(matches!(deviation_stats(std::slice::from_ref(&r)), Err(Error::EmptyInput(_))));
        assert!(matches!(correlation_report(&[r], &[m]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn pearson_fixture() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]), None);
    }

    #[test]
    fn identical_and_constant_joints() {
        let frames = 6;
        let m = original(frames);
        let mut d = vec![[0.0; 3]; frames * JOINT_COUNT];
        for t in 0..frames {
            let v = 0.01 * (t as f64 + 1.0).powi(2);
            d[t * JOINT_COUNT + 3] = [v, 0.0, 0.0];
            d[t * JOINT_COUNT + 8] = [0.0, v, 0.0];
        }
        let report = correlation_report(&[result_with(&m, d, true)], &[m]).unwrap();
        assert!((report.disp_disp.get(3, 8).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(report.disp_disp.get(3, 3), Some(1.0));
        // joint 0 never moves: its whole row and column are masked
        for k in 0..JOINT_COUNT {
            assert_eq!(report.disp_disp.get(0, k), None);
            assert_eq!(report.disp_disp.get(k, 0), None);
        }
        assert_eq!(report.sample_count, 1);
    }

    #[test]
    fn uniform_deviation() {
        let m = original(5);
        let d = vec![[0.0, 0.0, 0.25]; 5 * JOINT_COUNT];
        let stats = deviation_stats(&[result_with(&m, d, true)]).unwrap();
        assert!(stats.mean.iter().all(|&v| v == 0.25));
        assert!(stats.std.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_shapes() {
        let m = original(6);
        let d: Vec<[f64; 3]> = (0..6 * JOINT_COUNT).map(|i| [(i % 7) as f64 * 1e-3, 0.0, 0.0]).collect();
        let r = result_with(&m, d, true);
        let report = correlation_report(std::slice::from_ref(&r), &[m]).unwrap();
        let csv = matrix_csv(&report.disp_speed, &report.joint_names).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), JOINT_COUNT + 1);
        assert!(lines.iter().all(|l| l.split(',').count() == JOINT_COUNT + 1));
        let stats = stats_csv(&deviation_stats(&[r]).unwrap()).unwrap();
        assert_eq!(stats.lines().count(), JOINT_COUNT + 1);
        assert!(stats.starts_with("joint,name,mean,std\n"));
    }
}
