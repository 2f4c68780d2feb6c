use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use nonrigid::affine_recovery::{
    self, estimate_dimension, ground_truth_point, recover_repeated_from_tracks,
    sample_generic_fiber, solve_quasi_identical, solve_repeated, SolveOptions, SystemId,
    ThreeViewEssentials,
};
use nonrigid::epipolar::{critical_check, decompose_essential, estimate_essential, CriticalTruth};
use nonrigid::geometry::{AffineDeformation, DepthAssignment};
use nonrigid::invariants::{
    invariants_known_basis, invariants_three_views_candidates, COORD_RESIDUAL_TOL,
};
use nonrigid::polymatch::{
    discover_support, fit_constraint, format_monomial, select_model, Bidegree, DiscoverOptions,
    ImageMonomial, SelectOptions, NULL_TOL, SUPPORT_TOL,
};
use nonrigid::polyrecover::{
    self, local_dimension, min_points, solve_poly_views, PolyOptions, PolySolution,
};
use nonrigid::simulation::{default_scene, save_tracks, simulate, tracks_to_json, Deformation};
use nonrigid::Error;

use crate::args::*;
use crate::inputs::{DeformationInput, Inputs};
use crate::CliError;

/// What a subcommand produces, before it is wrapped into a report.
#[derive(Default)]
pub struct Output {
    pub config: Value,
    pub results: Value,
    pub residuals: Value,
    pub warnings: Vec<String>,
}

fn rows(m: &Matrix3<f64>) -> Value {
    json!((0..3)
        .map(|r| (0..3).map(|c| m[(r, c)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn vec3(v: &Vector3<f64>) -> Value {
    json!([v.x, v.y, v.z])
}

fn affine_json(d: &AffineDeformation) -> Value {
    json!({ "linear": rows(&d.linear), "translation": vec3(&d.translation) })
}

fn bidegree(v: &[u32]) -> Bidegree {
    Bidegree::new(v[0], v[1])
}

fn support_json(support: &[ImageMonomial]) -> Value {
    json!(support
        .iter()
        .map(|m| json!({ "exponents": m, "monomial": format_monomial(m) }))
        .collect::<Vec<_>>())
}

fn solve_options(restarts: usize, seed: u64) -> SolveOptions {
    SolveOptions {
        restarts,
        seed,
        ..SolveOptions::default()
    }
}

fn solve_config(opts: &SolveOptions) -> Value {
    json!({
        "restarts": opts.restarts,
        "distinct_tol": opts.distinct_tol,
        "lm": opts.lm,
        "verify_tol": affine_recovery::VERIFY_TOL,
        "dim_zero_tol": affine_recovery::DIM_ZERO_TOL,
        "dim_keep_tol": affine_recovery::DIM_KEEP_TOL,
    })
}

pub fn simulate_cmd(a: &SimulateArgs, seed: u64, inputs: &mut Inputs) -> Result<Output, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = match (&a.scene, a.points) {
        (Some(path), _) => inputs.scene(path)?,
        (None, Some(n)) => default_scene(n, &mut rng),
        (None, None) => return Err(CliError::Usage("need --scene or --points".into())),
    };
    let deformation = match inputs.deformation(&a.deformation)? {
        DeformationInput::Affine(d) => Deformation::Affine(d),
        DeformationInput::Polynomial(p) => Deformation::Polynomial(p),
        DeformationInput::Pair(..) => {
            return Err(CliError::Usage(
                "simulate takes a single deformation".into(),
            ))
        }
    };
    let tracks = simulate(&scene, &deformation, a.repeats, a.noise, &mut rng)?;
    let mut results = json!({ "n_points": tracks.len(), "n_views": tracks.n_views() });
    match &a.tracks_out {
        Some(path) => {
            save_tracks(&tracks, path)?;
            results["tracks_path"] = json!(path);
        }
        None => {
            results["tracks"] =
                serde_json::from_str(&tracks_to_json(&tracks)).expect("tracks serialize")
        }
    }
    Ok(Output {
        results,
        ..Output::default()
    })
}

pub fn essential_cmd(a: &EssentialArgs, inputs: &mut Inputs) -> Result<Output, CliError> {
    let tracks = inputs.tracks(&a.tracks)?;
    let pairs = tracks.pair(a.views[0], a.views[1])?;
    let est = estimate_essential(&pairs)?;
    let family = decompose_essential(&est.essential)?;
    Ok(Output {
        config: json!({ "nullity_tol": nonrigid::epipolar::NULLITY_TOL }),
        results: json!({
            "essential": rows(&est.essential.matrix),
            "hartley_normalized": est.hartley_normalized,
            "family": { "t0": vec3(&family.t0), "a0": rows(&family.a0) },
        }),
        residuals: json!({
            "algebraic": est.algebraic_residual,
            "max_epipolar": est.max_epipolar_residual,
        }),
        warnings: Vec::new(),
    })
}

fn deformation_pair(
    inputs: &mut Inputs,
    path: &str,
    second: &Option<String>,
    scales: &Option<Vec<f64>>,
) -> Result<(AffineDeformation, AffineDeformation), CliError> {
    let first = inputs.deformation(path)?;
    if let DeformationInput::Pair(a, b) = first {
        return Ok((a, b));
    }
    let a = first.affine()?;
    let b = match (second, scales) {
        (Some(p), _) => inputs.deformation(p)?.affine()?,
        (None, Some(s)) => AffineDeformation::new(a.linear * s[0], a.translation * s[1])?,
        (None, None) => a,
    };
    Ok((a, b))
}

pub fn recover_affine_cmd(
    a: &RecoverAffineArgs,
    seed: u64,
    inputs: &mut Inputs,
) -> Result<Output, CliError> {
    let opts = solve_options(a.restarts, seed);
    let config = solve_config(&opts);
    if let Some(path) = &a.tracks {
        let tracks = inputs.tracks(path)?;
        if !a.repeated {
            let ess = ThreeViewEssentials::from_tracks(&tracks)?;
            return if a.quasi {
                let rec = solve_quasi_identical(&ess, &opts)?;
                Ok(Output {
                    config,
                    results: json!({ "deformation": affine_json(&rec.deformation), "scales": rec.scales }),
                    residuals: json!({ "system": rec.residual }),
                    warnings: Vec::new(),
                })
            } else {
                generic_witness(&ess, a.samples, &opts, None, config)
            };
        }
        let rec = recover_repeated_from_tracks(&tracks, &opts)?;
        let worst = rec.third_view_residuals.iter().copied().fold(0.0, f64::max);
        return Ok(Output {
            config,
            results: json!({
                "deformation": affine_json(&rec.recovered.deformation),
                "depths": rec.structure.depths.depths,
                "clusters": rec.recovered.cluster_count,
                "converged_restarts": rec.recovered.converged_count,
            }),
            residuals: json!({ "system": rec.recovered.residual, "third_view_max": worst }),
            warnings: vec!["translation and depths are determined up to one common scale".into()],
        });
    }
    let path = a
        .deformation
        .as_deref()
        .expect("clap requires tracks or deformation");
    let (first, second) = deformation_pair(inputs, path, &a.second, &a.scales)?;
    let ess = ThreeViewEssentials::from_deformations(&first, &second);
    if a.generic_witness {
        return generic_witness(&ess, a.samples, &opts, Some((&first, &second)), config);
    }
    let rec = if a.repeated {
        solve_repeated(&ess, &opts)?
    } else {
        solve_quasi_identical(&ess, &opts)?
    };
    let rel_error = rec.deformation.relative_error(&first);
    Ok(Output {
        config,
        results: json!({
            "deformation": affine_json(&rec.deformation),
            "scales": rec.scales,
            "clusters": rec.cluster_count,
            "converged_restarts": rec.converged_count,
            "relative_error_vs_input": rel_error,
        }),
        residuals: json!({ "system": rec.residual }),
        warnings: Vec::new(),
    })
}

fn generic_witness(
    ess: &ThreeViewEssentials,
    samples: usize,
    opts: &SolveOptions,
    truth: Option<(&AffineDeformation, &AffineDeformation)>,
    config: Value,
) -> Result<Output, CliError> {
    let mut results = json!({});
    if let Some((a, b)) = truth {
        let point = ground_truth_point(ess, a, b, (1.0, 1.0))?;
        let dim = estimate_dimension(SystemId::Generic, ess, &point)?;
        results["nullity_at_input"] = json!(dim.nullity);
        results["gap"] = json!(dim.gap);
    }
    let points = sample_generic_fiber(ess, samples, opts)?;
    let mut worst = 0.0_f64;
    let mut sols = Vec::new();
    for p in &points {
        worst = worst.max(affine_recovery::generic_residual(ess, p)?);
        let (first, second) = affine_recovery::generic_deformations(ess, p)?;
        sols.push(json!({ "first": affine_json(&first), "second": affine_json(&second) }));
    }
    results["solutions"] = json!(sols);
    Ok(Output {
        config,
        results,
        residuals: json!({ "generic_max": worst }),
        warnings: Vec::new(),
    })
}

pub fn invariants_cmd(
    a: &InvariantsArgs,
    seed: u64,
    inputs: &mut Inputs,
) -> Result<Output, CliError> {
    let tracks = inputs.tracks(&a.tracks)?;
    if let Some(path) = &a.known_basis {
        let scene = inputs.scene(path)?;
        if scene.points.len() < 4 {
            return Err(CliError::Usage("the basis scene needs four points".into()));
        }
        let basis = [0, 1, 2, 3].map(|j| scene.points[j]);
        let coords = invariants_known_basis(&tracks.pair(0, 1)?, &basis)?;
        let max = coords.residuals.iter().copied().fold(0.0, f64::max);
        return Ok(Output {
            config: json!({ "coord_residual_tol": COORD_RESIDUAL_TOL }),
            results: json!({ "coordinates": coords_json(&coords) }),
            residuals: json!({ "max": max }),
            warnings: Vec::new(),
        });
    }
    let opts = solve_options(a.restarts, seed);
    let candidates = invariants_three_views_candidates(&tracks, &opts)?;
    let mut warnings = Vec::new();
    if candidates.len() > 1 {
        warnings.push(format!(
            "{} coordinate sets explain all three views exactly",
            candidates.len()
        ));
    }
    let sets: Vec<Value> = candidates
        .iter()
        .map(|c| json!({ "deformation": affine_json(&c.deformation), "coordinates": coords_json(&c.coords) }))
        .collect();
    let max = candidates
        .iter()
        .flat_map(|c| c.coords.residuals.iter().copied())
        .fold(0.0, f64::max);
    Ok(Output {
        config: solve_config(&opts),
        results: json!({ "candidates": sets }),
        residuals: json!({ "max": max }),
        warnings,
    })
}

fn coords_json(c: &nonrigid::invariants::AffineInvariantCoords) -> Value {
    json!((0..c.len())
        .map(|i| {
            let v = c.coords[i];
            [v.x, v.y, v.z, c.delta(i)]
        })
        .collect::<Vec<_>>())
}

pub fn implicitize_cmd(
    a: &ImplicitizeArgs,
    seed: u64,
    inputs: &mut Inputs,
) -> Result<Output, CliError> {
    let model = inputs.model(&a.model)?;
    let bound = bidegree(&a.bound);
    let mut opts = DiscoverOptions::for_bound(bound);
    opts.seed = seed;
    if let Some(n) = a.samples {
        opts.n_samples = n;
    }
    let imp = discover_support(&model, bound, &opts)?;
    Ok(Output {
        config: json!({ "n_samples": opts.n_samples, "draws": opts.draws, "null_tol": NULL_TOL, "support_tol": SUPPORT_TOL }),
        results: json!({
            "bidegree": imp.bidegree,
            "support_size": imp.support.len(),
            "support": support_json(&imp.support),
            "coefficients": imp.coefficients,
        }),
        residuals: json!({ "gap": imp.gap }),
        warnings: Vec::new(),
    })
}

pub fn fit_constraint_cmd(
    a: &FitConstraintArgs,
    seed: u64,
    inputs: &mut Inputs,
) -> Result<Output, CliError> {
    let tracks = inputs.tracks(&a.tracks)?;
    let support: Vec<ImageMonomial> = match (&a.model, &a.support) {
        (Some(m), _) => {
            let model = inputs.model(m)?;
            let bound = bidegree(&a.bound);
            let mut opts = DiscoverOptions::for_bound(bound);
            opts.seed = seed;
            discover_support(&model, bound, &opts)?.support
        }
        (None, Some(path)) => {
            let text = inputs.text(path)?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?
        }
        (None, None) => return Err(CliError::Usage("need --model or --support".into())),
    };
    let fit = fit_constraint(&support, &tracks.pair(0, 1)?)?;
    Ok(Output {
        config: json!({ "null_tol": NULL_TOL }),
        results: json!({ "support": support_json(&fit.support), "coefficients": fit.coefficients }),
        residuals: json!({ "fit": fit.fit_residual, "rank_gap": fit.rank_gap }),
        warnings: Vec::new(),
    })
}

pub fn select_model_cmd(
    a: &SelectModelArgs,
    seed: u64,
    inputs: &mut Inputs,
) -> Result<Output, CliError> {
    let tracks = inputs.tracks(&a.tracks)?;
    let candidates = a
        .models
        .iter()
        .map(|m| inputs.model(m))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = SelectOptions {
        kappa: a.kappa,
        accept_tol: a.accept_tol,
        bound: bidegree(&a.bound),
        seed,
        ..SelectOptions::default()
    };
    let verdict = select_model(&tracks.pair(0, 1)?, &candidates, &opts)?;
    let residuals: Vec<Option<f64>> = verdict.candidates.iter().map(|c| c.fit_residual).collect();
    Ok(Output {
        config: json!({ "kappa": opts.kappa, "accept_tol": opts.accept_tol, "residual_floor": opts.residual_floor, "bound": opts.bound }),
        results: json!({ "selected": verdict.selected, "selected_model": a.models[verdict.selected], "candidates": verdict.candidates }),
        residuals: json!({ "fit": residuals }),
        warnings: Vec::new(),
    })
}

fn poly_solution_json(s: &PolySolution) -> Value {
    json!({ "deformation": s.deformation, "depths": s.depths.depths, "residual": s.residual })
}

pub fn recover_poly_cmd(
    a: &RecoverPolyArgs,
    seed: u64,
    inputs: &mut Inputs,
) -> Result<Output, CliError> {
    let tracks = inputs.tracks(&a.tracks)?;
    let model = inputs.model(&a.model)?;
    let opts = PolyOptions {
        restarts: a.restarts,
        seed,
        data_scale: a.depth_scale,
        ..PolyOptions::default()
    };
    let needed = min_points(&model);
    if tracks.n_views() == 3 && tracks.len() < needed {
        return Err(Error::InsufficientPoints {
            needed,
            got: tracks.len(),
        }
        .into());
    }
    let report = solve_poly_views(&tracks, &model, &opts)?;
    if report.solutions.is_empty() {
        return Err(Error::NoConvergence {
            restarts: a.restarts,
            best_residual: report.best_residual,
        }
        .into());
    }
    let mut warnings = Vec::new();
    if polyrecover::has_scale_gauge(&model) {
        warnings.push("the model admits X -> kΦ(X/k): depths and coefficients are reported with the first depth scaled to 1".into());
    }
    if tracks.n_views() == 2 {
        warnings
            .push("two views never determine the map; solutions are samples of a continuum".into());
    } else if report.solutions.len() > 1 {
        warnings.push(format!(
            "{} distinct solutions explain the tracks",
            report.solutions.len()
        ));
    }
    let solutions: Vec<Value> = report
        .solutions
        .iter()
        .map(|s| poly_solution_json(&s.gauge_normalized(&model)))
        .collect();
    Ok(Output {
        config: json!({
            "restarts": opts.restarts,
            "depth_scales": opts.depth_scales,
            "data_scale": opts.data_scale,
            "lm": opts.lm,
            "verify_tol": opts.verify_tol,
            "distinct_tol": opts.distinct_tol,
        }),
        results: json!({ "solutions": solutions, "converged_restarts": report.converged, "min_points": needed }),
        residuals: json!({ "best": report.best_residual }),
        warnings,
    })
}

pub fn dim_check_cmd(a: &DimCheckArgs, inputs: &mut Inputs) -> Result<Output, CliError> {
    if let SystemKind::Poly = a.system {
        let (Some(tracks), Some(model), Some(scene)) = (&a.tracks, &a.model, &a.scene) else {
            return Err(CliError::Usage(
                "--system poly needs --tracks, --model and --scene".into(),
            ));
        };
        let tracks = inputs.tracks(tracks)?;
        let model = inputs.model(model)?;
        let scene = inputs.scene(scene)?;
        let deformation = inputs.deformation(&a.deformation)?.polynomial();
        if scene.points.len() != tracks.len() {
            return Err(CliError::Usage(
                "scene and tracks differ in point count".into(),
            ));
        }
        let depths = scene
            .points
            .iter()
            .zip(&tracks.views[0])
            .map(|(p, q)| p.0.norm() / q.0.norm())
            .collect();
        let solution = PolySolution {
            deformation,
            depths: DepthAssignment::new(depths)?,
            residual: 0.0,
            n_solutions_found: 1,
        };
        let dim = local_dimension(&tracks, &model, &solution)?;
        return Ok(Output {
            config: json!({ "zero_tol": polyrecover::DIM_ZERO_TOL, "keep_tol": polyrecover::DIM_KEEP_TOL }),
            results: json!({ "nullity": dim.nullity, "gauge": dim.gauge, "dimension": dim.dimension(), "gap": dim.gap }),
            residuals: json!({ "singular_values": dim.singular_values }),
            warnings: Vec::new(),
        });
    }
    let (first, second) = deformation_pair(inputs, &a.deformation, &a.second, &a.scales)?;
    let scales = a.scales.as_ref().map_or((1.0, 1.0), |s| (s[0], s[1]));
    let ess = ThreeViewEssentials::from_deformations(&first, &second);
    let system = match a.system {
        SystemKind::Generic => SystemId::Generic,
        SystemKind::Repeated => SystemId::Repeated,
        SystemKind::Quasi => SystemId::Quasi,
        SystemKind::QuasiScales => SystemId::QuasiUnknownScales,
        SystemKind::Poly => unreachable!("handled above"),
    };
    let point = ground_truth_point(&ess, &first, &second, scales)?;
    let dim = estimate_dimension(system, &ess, &point)?;
    Ok(Output {
        config: json!({ "zero_tol": affine_recovery::DIM_ZERO_TOL, "keep_tol": affine_recovery::DIM_KEEP_TOL }),
        results: json!({ "nullity": dim.nullity, "gap": dim.gap }),
        residuals: json!({ "singular_values": dim.singular_values }),
        warnings: Vec::new(),
    })
}

pub fn critical_check_cmd(a: &CriticalCheckArgs, inputs: &mut Inputs) -> Result<Output, CliError> {
    let tracks = inputs.tracks(&a.tracks)?;
    let pairs = tracks.pair(0, 1)?;
    let report = match (&a.deformation, &a.scene) {
        (Some(d), Some(s)) => {
            let deformation = inputs.deformation(d)?.affine()?;
            let scene = inputs.scene(s)?;
            critical_check(
                &pairs,
                Some(CriticalTruth {
                    deformation: &deformation,
                    points: &scene.points,
                }),
            )?
        }
        _ => critical_check(&pairs, None)?,
    };
    let mut warnings = Vec::new();
    if report.critical {
        warnings.push(format!(
            "epipolar nullspace has dimension {}",
            report.nullspace_dim
        ));
    }
    Ok(Output {
        config: json!({ "nullity_tol": nonrigid::epipolar::NULLITY_TOL }),
        results: json!({ "nullspace_dim": report.nullspace_dim, "critical": report.critical, "extra_solutions": report.extra_solutions }),
        residuals: json!({ "singular_values": report.singular_values }),
        warnings,
    })
}
