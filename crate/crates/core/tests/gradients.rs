mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    let report = common::gradient_report();
    for (name, err) in &report {
        println!("{name}: worst relative error {err:.3e}");
    }
    for (name, err) in report {
        assert!(err < 1e-4, "{name}: relative error {err:.3e}");
    }
}
