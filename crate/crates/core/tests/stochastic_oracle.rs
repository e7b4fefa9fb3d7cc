use halfspace_lab::grid::{image_kernel_oracle, Bc};
use halfspace_lab::operator::catalog;
use halfspace_lab::stochastic::{feynman_kac, McConfig};

fn erf(x: f64) -> f64 {
    // survival of Brownian motion with generator Δ started at x: erf(x / 2√t)
    image_kernel_oracle(&|_| 1.0, 0.0, 1.0, x, Bc::Dirichlet, 0.0).unwrap()
}

#[test]
fn killed_survival_matches_oracle() {
    let (heat, _) = catalog::heat(1, 0.0);
    let cfg = McConfig::new(20_000, 0.01, 11);
    for x in [0.3, 1.0] {
        let e = feynman_kac(&heat, Bc::Dirichlet, &|_| 1.0, 0.0, 1.0, &[x], &cfg).unwrap();
        let want = erf(x);
        println!("x={x}: {} ± {} vs {want}", e.estimate, e.stderr);
        assert!((e.estimate - want).abs() < 4.0 * e.stderr + 2e-3);
    }
    // a start next to the wall dies almost surely
    let e = feynman_kac(&heat, Bc::Dirichlet, &|_| 1.0, 0.0, 1.0, &[1e-6], &cfg).unwrap();
    assert!(e.estimate <= 1e-3);
}

#[test]
fn heat_feynman_kac_matches_image_oracle() {
    let (heat, _) = catalog::heat(1, 0.25);
    let f = |y: f64| (-(y - 1.0) * (y - 1.0)).exp();
    let cfg = McConfig::new(100_000, 0.01, 5);
    for bc in [Bc::Dirichlet, Bc::Neumann] {
        let e = feynman_kac(&heat, bc, &|x| f(x[0]), 0.0, 0.5, &[0.6], &cfg).unwrap();
        let want = image_kernel_oracle(&f, 0.0, 0.5, 0.6, bc, 0.25).unwrap();
        println!("{bc:?}: {} ± {} vs {want}", e.estimate, e.stderr);
        assert!((e.estimate - want).abs() < 4.0 * e.stderr + 1e-3);
    }
}

#[test]
fn constant_potential_scales_constant_datum() {
    let (heat, _) = catalog::heat(2, 0.7);
    let cfg = McConfig::new(1000, 0.05, 3);
    let e = feynman_kac(&heat, Bc::Neumann, &|_| 1.0, 1.0, 3.0, &[0.2, 0.4], &cfg).unwrap();
    assert!((e.estimate - (-1.4f64).exp()).abs() < 1e-12);
}

#[test]
fn folded_ou_reaches_unit_second_moment() {
    let (ou, _) = catalog::ornstein_uhlenbeck(1, 1.0);
    let cfg = McConfig::new(40_000, 0.002, 21);
    let e = feynman_kac(&ou, Bc::Neumann, &|x| x[0] * x[0], 0.0, 6.0, &[0.5], &cfg).unwrap();
    println!("E x^2 = {} ± {}", e.estimate, e.stderr);
    // Euler bias at dt = 0.002 is about dt/2
    assert!((e.estimate - 1.0).abs() < 4.0 * e.stderr + 2e-3);
}
