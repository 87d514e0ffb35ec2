//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, Result};

use qni_core::fisher::{build_fim, FisherReport, PROBABILITY_FLOOR};
use qni_core::forward::{CoefficientTensor, ForwardModel, TensorMode};
use qni_core::io::dataset::DatasetFile;
use qni_core::io::report::{fisher_report_to_string, sweep_to_csv};
use qni_core::io::tensor::{read_tensor, write_tensor};
use qni_core::measurement::TupleSet;
use qni_core::sim::rng::stream_rng;
use qni_core::sim::{
    fit_correlation_width, sweep_width, synthesize_dataset, SweepConfig, SweepEval, SweepMetric,
};
use qni_core::source::SourceKind;
use qni_core::swm::{infidelity, naive_diagonal_image, reconstruct, WindowFlag};

use crate::config::RunConfig;
use crate::svg::{profile_svg, Series};

pub fn cmd_simulate(
    cfg: &RunConfig,
    config_dir: &Path,
    out: &Path,
    seed_override: Option<u64>,
    withhold_truth: bool,
    tensor_cache: Option<&Path>,
) -> Result<()> {
    let sys = cfg.system()?;
    let src = cfg.source()?;
    let obj = cfg.object(config_dir)?;
    let det = cfg.detectors(&obj, &sys)?;
    let cap = cfg.tuple_cap_um(&sys);
    let seed = seed_override.unwrap_or(cfg.run.seed);
    if let Some(cache) = tensor_cache {
        // keep the cache warm for repeated runs on the same geometry
        let mode = TensorMode::for_pixel_size(obj.dims, obj.pixel_size_um, sys.rayleigh_width_um());
        let tensor = match read_tensor(cache) {
            Ok(t) if t.n_pix == obj.len() && t.source_kind == src.kind() && t.mode == mode => t,
            _ => {
                let t = CoefficientTensor::build(&obj, &sys, &src, &det, mode)?;
                write_tensor(&t, cache)?;
                t
            }
        };
        drop(tensor);
    }
    let data = synthesize_dataset(&obj, &sys, &src, &det, cfg.run.order, cap, cfg.run.events, seed)?;
    let file = DatasetFile::assemble(&sys, &src, &obj, &det, &data, cap, !withhold_truth);
    std::fs::create_dir_all(out)?;
    let path = out.join("dataset.toml");
    file.write(&path)?;
    let in_tuple: f64 = data.frequencies.iter().sum();
    println!(
        "simulate: {} outcomes, {} detectors, no-counts frequency {:.6}, in-tuple fraction {:.6}",
        data.tuples.len(),
        det.len(),
        data.no_count_frequency,
        in_tuple
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn geometry_matches(cfg: &RunConfig, file: &DatasetFile) -> bool {
    let g = &file.geometry;
    cfg.geometry.object_distance_mm == g.object_distance_mm
        && cfg.geometry.image_distance_mm == g.image_distance_mm
        && cfg.geometry.lens_radius_mm == g.lens_radius_mm
        && cfg.geometry.wavelength_nm == g.wavelength_nm
        && cfg.geometry.detector_pitch_um == g.detector_pitch_um
        && cfg.source.kind == file.source.kind
        && cfg.source.correlation_width_um == file.source.correlation_width_um
}

pub fn cmd_reconstruct(cfg: &RunConfig, dataset: &Path, out: &Path, svg: bool) -> Result<()> {
    let file = DatasetFile::read(dataset)?;
    if !geometry_matches(cfg, &file) {
        bail!("config geometry/source does not match the dataset header");
    }
    let sys = file.system()?;
    let src = file.source()?;
    let det = file.detectors()?;
    let target = file.object_grid()?;
    let data = file.measurement()?;
    let truth = file.object.truth.clone();
    let pipeline = cfg.pipeline(&sys);
    let rec = reconstruct(
        &data,
        &target,
        &sys,
        &src,
        &det,
        &pipeline,
        truth.as_deref(),
    )?;

    std::fs::create_dir_all(out)?;
    // estimate table
    let mut csv = String::from(match &truth {
        Some(_) => "index,center_x_um,center_y_um,estimate,truth\n",
        None => "index,center_x_um,center_y_um,estimate\n",
    });
    for (j, &v) in rec.object.transmissions().iter().enumerate() {
        let c = rec.object.pixel_center(j);
        match &truth {
            Some(t) => csv.push_str(&format!("{j},{},{},{v},{}\n", c[0], c[1], t[j])),
            None => csv.push_str(&format!("{j},{},{},{v}\n", c[0], c[1])),
        }
    }
    let est_path = out.join("estimate.csv");
    std::fs::write(&est_path, csv)?;

    // report (no wall-clock fields: outputs are byte-stable per config+seed)
    let converged = rec
        .window_flags
        .iter()
        .filter(|f| **f == WindowFlag::Converged)
        .count();
    let mut rep = String::from("# reconstruction report v1\n");
    rep.push_str(&format!("initial_pixel_size_um = {}\n", rec.initial_pixel_size_um));
    rep.push_str(&format!("final_pixel_size_um = {}\n", rec.object.pixel_size_um));
    rep.push_str(&format!("pixel_count = {}\n", rec.object.len()));
    rep.push_str(&format!("window_solves = {}\n", rec.window_flags.len()));
    rep.push_str(&format!("window_solves_converged = {converged}\n"));
    if let Some(infid) = rec.infidelity {
        rep.push_str(&format!("infidelity = {infid:e}\n"));
        // the diagonal-only image is the reference the windowed fit beats
        let naive = naive_diagonal_image(&data, &target, &sys, &det);
        if let Ok(naive_infid) = infidelity(truth.as_deref().unwrap(), &naive) {
            rep.push_str(&format!("naive_diagonal_infidelity = {naive_infid:e}\n"));
        }
    }
    rep.push_str("sweeps = pixel_size_um,residual,aborted\n");
    for s in &rec.sweep_history {
        rep.push_str(&format!("{},{:e},{}\n", s.pixel_size_um, s.residual, s.aborted));
    }
    let rep_path = out.join("recon_report.txt");
    std::fs::write(&rep_path, rep)?;

    if svg {
        let mut series = vec![Series {
            label: "estimate",
            values: rec.object.transmissions(),
            color: "#1f77b4",
            dashed: false,
        }];
        if let Some(t) = &truth {
            series.push(Series { label: "truth", values: t, color: "#555555", dashed: true });
        }
        std::fs::write(out.join("profile.svg"), profile_svg(&series))?;
    }

    match rec.infidelity {
        Some(infid) => println!(
            "reconstruct: {} pixels, infidelity {infid:.4e}, {} of {} window solves converged",
            rec.object.len(),
            converged,
            rec.window_flags.len()
        ),
        None => println!(
            "reconstruct: {} pixels (no truth supplied), {} of {} window solves converged",
            rec.object.len(),
            converged,
            rec.window_flags.len()
        ),
    }
    println!("wrote {} and {}", est_path.display(), rep_path.display());
    Ok(())
}

pub fn cmd_analyze_fim(
    cfg: &RunConfig,
    config_dir: &Path,
    out: &Path,
    at_uniform: bool,
    debug_identity: Option<usize>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let report = if let Some(n) = debug_identity {
        FisherReport::from_matrix(ndarray::Array2::<f64>::eye(n), PROBABILITY_FLOOR)
    } else {
        let sys = cfg.system()?;
        let src = cfg.source()?;
        let obj = cfg.object(config_dir)?;
        let det = cfg.detectors(&obj, &sys)?;
        let cap = cfg.tuple_cap_um(&sys);
        let mode = TensorMode::for_pixel_size(obj.dims, obj.pixel_size_um, sys.rayleigh_width_um());
        let tensor = CoefficientTensor::build(&obj, &sys, &src, &det, mode)?;
        let tuples = TupleSet::build(&det, cfg.run.order, cap)?;
        let model = ForwardModel::new(&tensor, &tuples)?;
        let x: Vec<f64> = if at_uniform {
            vec![1.0; obj.len()]
        } else {
            obj.transmissions().to_vec()
        };
        let (pbar, p0) = model.probabilities(&x)?;
        let (grads, gp0) = model.gradients(&x);
        build_fim(&pbar, p0, &grads.view(), &gp0, PROBABILITY_FLOOR)?
    };
    let rho_star = cfg.window.rho_star;
    let verdict = report.dominance_verdict(rho_star);
    let text = fisher_report_to_string(&report);
    let rep_path = out.join("fim_report.txt");
    std::fs::write(&rep_path, &text)?;
    // heat-map data: the matrix block alone, for plotting
    let mut matrix_csv = String::new();
    for i in 0..report.dim() {
        let row: Vec<String> = (0..report.dim()).map(|j| format!("{:e}", report.matrix[[i, j]])).collect();
        matrix_csv.push_str(&row.join(","));
        matrix_csv.push('\n');
    }
    std::fs::write(out.join("fim_matrix.csv"), matrix_csv)?;
    println!(
        "analyze-fim: m = {}, Tr F^-1 = {:.6e} (rank {}), effective bandwidth {}, diagonally dominant: {} (rho* = {rho_star})",
        report.dim(),
        report.inv_trace,
        report.effective_rank,
        report.effective_bandwidth,
        verdict
    );
    println!("wrote {}", rep_path.display());
    Ok(())
}

pub fn cmd_sweep_width(cfg: &RunConfig, config_dir: &Path, out: &Path) -> Result<()> {
    let Some(sweep_cfg) = &cfg.sweep else {
        bail!("config has no [sweep] block");
    };
    let sys = cfg.system()?;
    let obj = cfg.object(config_dir)?;
    let det = cfg.detectors(&obj, &sys)?;
    let cap = cfg.tuple_cap_um(&sys);
    let kind = match cfg.source.kind.as_str() {
        "thermal" => SourceKind::Thermal,
        "spdc" => SourceKind::Spdc,
        other => bail!("unknown source kind '{other}'"),
    };
    let metric = match sweep_cfg.metric.as_str() {
        "crb" => SweepMetric::CrbTrace,
        "infidelity" => SweepMetric::Infidelity,
        other => bail!("unknown sweep metric '{other}' (crb | infidelity)"),
    };
    let eval = match sweep_cfg.eval.as_str() {
        "truth" => SweepEval::Truth,
        "uniform" => SweepEval::Uniform,
        other => bail!("unknown sweep eval '{other}' (truth | uniform)"),
    };
    let sc = SweepConfig {
        truth: &obj,
        sys: &sys,
        kind,
        det: &det,
        order: cfg.run.order,
        tuple_cap_um: cap,
        events: cfg.run.events,
        seeds: sweep_cfg.seeds.clone(),
        metric,
        eval,
        pipeline: Some(cfg.pipeline(&sys)),
    };
    let sweep = sweep_width(&sweep_cfg.grid_um, &sc)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    std::fs::write(&path, sweep_to_csv(&sweep))?;
    match sweep.argmin {
        Some(i) => println!(
            "sweep-width: argmin w_c = {} um (value {:.6e}), monotone toward small w_c: {}",
            sweep.grid[i],
            sweep.points[i].value.unwrap(),
            sweep.monotone_nonincreasing_toward_small
        ),
        None => println!("sweep-width: no valid points"),
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_bias_demo(
    f11: f64,
    events: u64,
    grid_points: usize,
    mc_trials: usize,
    out: &Path,
    seed: u64,
) -> Result<()> {
    if grid_points < 2 || !(f11 > 0.0) || events == 0 {
        bail!("bias demo needs grid_points >= 2, F11 > 0 and events >= 1");
    }
    let f11n = f11 * events as f64;
    let delta_sq = 1.0 / f11n;
    // common random numbers across the grid
    let z: Vec<f64> = if mc_trials > 0 {
        use rand_distr::{Distribution, StandardNormal};
        let mut gen = stream_rng(seed, 0);
        (0..mc_trials).map(|_| StandardNormal.sample(&mut gen)).collect()
    } else {
        Vec::new()
    };
    let mut csv = String::from(if mc_trials > 0 {
        "x,xi,mean,variance_bound,mse,mc_mean,mc_var,mc_mse\n"
    } else {
        "x,xi,mean,variance_bound,mse\n"
    });
    for i in 0..grid_points {
        let x = i as f64 / (grid_points - 1) as f64;
        let st = qni_core::fisher::clipped_estimator_stats(x, f11, events)?;
        if mc_trials > 0 {
            let delta = delta_sq.sqrt();
            let mut s = 0.0;
            let mut s2 = 0.0;
            let mut se = 0.0;
            for &zi in &z {
                let yp = (x + delta * zi).min(1.0);
                s += yp;
                s2 += yp * yp;
                se += (yp - x) * (yp - x);
            }
            let n = mc_trials as f64;
            let mean = s / n;
            let var = s2 / n - mean * mean;
            let mse = se / n;
            csv.push_str(&format!(
                "{x},{},{},{},{},{mean},{var},{mse}\n",
                st.xi, st.mean, st.variance_bound, st.mse
            ));
        } else {
            csv.push_str(&format!("{x},{},{},{},{}\n", st.xi, st.mean, st.variance_bound, st.mse));
        }
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("bias_demo.csv");
    std::fs::write(&path, csv)?;
    let at_one = qni_core::fisher::clipped_estimator_stats(1.0, f11, events)?;
    println!(
        "bias-demo: F11 N = {f11n}, variance bound at x = 1 is {:.3} Delta^2",
        at_one.variance_bound / delta_sq
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_fit_width(dataset: &Path, out: &Path) -> Result<()> {
    let file = DatasetFile::read(dataset)?;
    if file.run.order != 2 {
        bail!("fit-width needs a second-order dataset");
    }
    let det = file.detectors()?;
    let sys = file.system()?;
    let data = file.measurement()?;
    // For thermal pairs f_ij = (I_ii I_jj + I_ij^2)/P_S and f_ii = 2 I_ii^2/P_S,
    // so with a_i = sqrt(f_ii/2) the correlated part is exactly f_ij - a_i a_j.
    let mut amp: Vec<Option<f64>> = vec![None; det.len()];
    for (k, t) in data.tuples.tuples().iter().enumerate() {
        if t[0] == t[1] {
            amp[t[0]] = Some((data.frequencies[k].max(0.0) / 2.0).sqrt());
        }
    }
    let mut pairs: Vec<([f64; 2], [f64; 2], f64)> = Vec::new();
    for (k, t) in data.tuples.tuples().iter().enumerate() {
        if t[0] == t[1] {
            continue;
        }
        let (Some(a), Some(b)) = (amp[t[0]], amp[t[1]]) else {
            continue;
        };
        let corr = (data.frequencies[k] - a * b).max(0.0);
        pairs.push((det.point(t[0]), det.point(t[1]), corr));
    }
    if pairs.is_empty() {
        bail!("dataset has no distinct detector pairs with matching same-point tuples");
    }
    let w_c = fit_correlation_width(&pairs, sys.magnification())?;
    std::fs::create_dir_all(out)?;
    let path = out.join("fit_width.txt");
    std::fs::write(
        &path,
        format!(
            "# correlation width fit v1\nfitted_w_c_um = {w_c}\npairs = {}\n",
            pairs.len()
        ),
    )?;
    println!("fit-width: w_c = {w_c:.4} um over {} pairs", pairs.len());
    println!("note: this is the image-side correlation width mapped to the object plane; the point-spread function broadens it when w_c is below the Rayleigh width");
    println!("wrote {}", path.display());
    Ok(())
}
