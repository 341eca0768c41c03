use blockcs_core::*;
use rand::{Rng, SeedableRng};

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let truth = Image::from_fn(16, 16, |r, c| {
        let blob = if (r as i32 - 8).pow(2) + (c as i32 - 8).pow(2) < 20 {
            120.0
        } else {
            50.0
        };
        blob + rng.gen_range(-2.0..2.0)
    });
    let geom = BlockGeometry::for_image(16, 16, 8).unwrap();
    let op = make_gaussian_operator(32, 64, 12).unwrap();
    let ms = sense(&truth, &op, &geom).unwrap();
    let patch = PatchConfig {
        patch_side: 4,
        group_size: 8,
        stride: 2,
        search_window: 12,
    };
    let params = RefineParams {
        patch,
        ..RefineParams::default()
    };
    let refined = solve_refined(
        &ms,
        &op,
        &geom,
        TransformMode::Combined,
        &params,
        Some(&truth),
    )
    .unwrap();
    let tv_len = solve_tv(&ms, &op, &geom, &params.tv, None)
        .unwrap()
        .trace
        .records
        .len();
    for r in &refined.trace.records[tv_len..] {
        println!(
            "it {:3} obj {:14.8} misfit {:10.6} rel {:9.2e} psnr {:.2}",
            r.iteration,
            r.objective,
            r.misfit,
            r.rel_change,
            r.psnr.unwrap()
        );
    }

    // Tight-TV full-rate probe for the zero-threshold fixed-point test.
    let truth2 = Image::from_fn(12, 12, |r, _| if r < 6 { 70.0 } else { 180.0 });
    let geom2 = BlockGeometry::for_image(12, 12, 6).unwrap();
    let op2 = make_gaussian_operator(36, 36, 9).unwrap();
    let ms2 = sense(&truth2, &op2, &geom2).unwrap();
    for (label, tv) in [
        ("default", TvParams::default()),
        (
            "tight",
            TvParams {
                inner_tol: 1e-10,
                outer_tol: 1e-12,
                max_inner: 100,
                max_outer: 600,
                ..TvParams::default()
            },
        ),
    ] {
        let sol = solve_tv(&ms2, &op2, &geom2, &tv, Some(&truth2)).unwrap();
        let last = sol.trace.records.last().unwrap();
        println!(
            "{label}: outers {} misfit {:.3e} psnr {:.2}",
            sol.trace.records.len(),
            last.misfit,
            last.psnr.unwrap()
        );
    }
}
