use halfspace_lab::grid::{image_kernel_oracle, image_kernel_oracle_gradient, solve, gradient, Bc, GridConfig};
use halfspace_lab::operator::catalog;

fn bump(x: &[f64]) -> f64 {
    (-(x[0] - 2.0) * (x[0] - 2.0)).exp()
}

fn sup_error(bc: Bc, cfg: &GridConfig) -> f64 {
    let (spec, _) = catalog::heat(1, 0.0);
    let field = solve(&spec, bc, &bump, 0.0, &[0.1], cfg).unwrap();
    let u = field.at(0.1).unwrap();
    let mut x = [0.0];
    let mut err = 0.0f64;
    for (n, v) in u.iter().enumerate() {
        field.grid.node_coords(n, &mut x);
        let want = image_kernel_oracle(&|y| bump(&[y]), 0.0, 0.1, x[0], bc, 0.0).unwrap();
        err = err.max((v - want).abs());
    }
    err
}

#[test]
fn heat_matches_image_oracle_and_converges() {
    let cfg = GridConfig::new(8.0, vec![512], 1e-3);
    for bc in [Bc::Dirichlet, Bc::Neumann] {
        let e1 = sup_error(bc, &cfg);
        let e2 = sup_error(bc, &cfg.refined());
        println!("{bc:?}: {e1:e} -> {e2:e} ratio {}", e1 / e2);
        assert!(e1 <= 1e-3);
        assert!(e1 / e2 >= 3.0);
    }
}

#[test]
fn heat_gradient_matches_differentiated_oracle() {
    let (spec, _) = catalog::heat(1, 0.0);
    let cfg = GridConfig::new(8.0, vec![512], 1e-3);
    let field = solve(&spec, Bc::Dirichlet, &bump, 0.0, &[0.1], &cfg).unwrap();
    let g = gradient(&field, 0.1).unwrap();
    let got = g.interpolate(&[2.0]).unwrap()[0];
    let want = image_kernel_oracle_gradient(&|y| bump(&[y]), 0.0, 0.1, 2.0, Bc::Dirichlet, 0.0).unwrap();
    assert!((got - want).abs() < 1e-3, "{got} vs {want}");
}
