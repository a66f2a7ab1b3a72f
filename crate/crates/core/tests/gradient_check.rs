#[path = "common/gradient_oracle.rs"]
mod gradient_oracle;

use gradient_oracle::{worst_gradient_error, TOL};

#[test]
fn gradients_match_finite_differences() {
    let w = worst_gradient_error();
    assert!(
        w.err <= TOL,
        "{} coordinates, worst {}[{}]: analytic {:e} numeric {:e} rel {:e}",
        w.checked,
        w.name,
        w.index,
        w.analytic,
        w.numeric,
        w.err
    );
}
