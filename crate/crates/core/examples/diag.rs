use blockcs_core::*;

fn run(label: &str, params: &TvParams) {
    let truth = Image::from_fn(8, 8, |r, c| if c < 4 { 60.0 + r as f64 } else { 190.0 });
    let geom = BlockGeometry::for_image(8, 8, 4).unwrap();
    let op = make_gaussian_operator(16, 16, 2).unwrap();
    let ms = sense(&truth, &op, &geom).unwrap();
    let sol = solve_tv(&ms, &op, &geom, params, Some(&truth)).unwrap();
    let last = sol.trace.records.last().unwrap();
    println!(
        "{label}: outers {} misfit {:.4e} psnr {:.2} converged {}",
        sol.trace.records.len(),
        last.misfit,
        last.psnr.unwrap(),
        sol.trace.converged
    );

    let truth2 = Image::from_fn(32, 32, |_, c| if c < 15 { 50.0 } else { 200.0 });
    let geom2 = BlockGeometry::for_image(32, 32, 16).unwrap();
    let op2 = make_gaussian_operator(128, 256, 4).unwrap();
    let ms2 = sense(&truth2, &op2, &geom2).unwrap();
    let sol2 = solve_tv(&ms2, &op2, &geom2, params, Some(&truth2)).unwrap();
    let last2 = sol2.trace.records.last().unwrap();
    println!(
        "{label} pw: outers {} misfit {:.4e} psnr {:.2} converged {}",
        sol2.trace.records.len(),
        last2.misfit,
        last2.psnr.unwrap(),
        sol2.trace.converged
    );
}

fn main() {
    run("default", &TvParams::default());
    run(
        "deep-inner",
        &TvParams {
            max_inner: 200,
            inner_tol: 1e-8,
            ..TvParams::default()
        },
    );
    run(
        "deep-both",
        &TvParams {
            max_inner: 200,
            inner_tol: 1e-8,
            max_outer: 200,
            ..TvParams::default()
        },
    );
    run(
        "tight",
        &TvParams {
            inner_tol: 1e-6,
            outer_tol: 1e-7,
            max_inner: 40,
            max_outer: 200,
            ..TvParams::default()
        },
    );
    run(
        "ultra",
        &TvParams {
            inner_tol: 1e-8,
            outer_tol: 1e-9,
            max_inner: 60,
            max_outer: 400,
            ..TvParams::default()
        },
    );
}
