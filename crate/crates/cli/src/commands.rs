//! Command implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use certlab::bounds::InputBox;
use certlab::data::Dataset;
use certlab::diagnostics::{self, kink_count, LandscapeInstance};
use certlab::evaluation::{self, CertifyOptions};
use certlab::training::{self, history_csv, PgdOptions, TrainConfig};
use certlab::Network;
use serde_json::json;

use crate::{
    write_output, CertifyArgs, CertifyOpts, CliError, CliResult, CrossArgs, CurveArgs, LandscapeArgs, LpCheckArgs,
    OutArgs, SweepArgs, TrainArgs,
};

/// Settings shared by every command.
pub struct Context {
    pub data_dir: PathBuf,
    pub seed: Option<u64>,
}

fn out_dir(out: &OutArgs) -> CliResult<&Path> {
    std::fs::create_dir_all(&out.out).map_err(|source| CliError::File {
        path: out.out.clone(),
        source,
    })?;
    Ok(&out.out)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(dir, name, &text)
}

fn load_net(path: &Path) -> CliResult<Network> {
    if !path.is_file() {
        return Err(CliError::File {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    Ok(Network::load(path)?)
}

fn check_compatible(net: &Network, data: &Dataset) -> CliResult<()> {
    if net.input_dim() != data.dim() || net.output_dim() != data.classes {
        return Err(CliError::Usage(format!(
            "network maps {} → {} but the dataset has {} features and {} classes",
            net.input_dim(),
            net.output_dim(),
            data.dim(),
            data.classes
        )));
    }
    Ok(())
}

fn certify_options(opts: &CertifyOpts) -> CertifyOptions {
    CertifyOptions {
        elision: !opts.no_elision,
        clip: !opts.no_clip,
    }
}

/// Applies `key=value` overrides on top of `cfg`.
fn apply_overrides(cfg: &TrainConfig, overrides: &[String]) -> CliResult<TrainConfig> {
    let mut text = cfg.to_text();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {o:?} is not key=value")))?;
        text.push_str(&format!("{} = {}\n", k.trim(), v.trim()));
    }
    Ok(TrainConfig::from_text(&text)?)
}

fn base_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    if let Some(name) = &args.preset {
        return training::presets()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")));
    }
    match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            Ok(TrainConfig::from_text(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

/// Trains a fresh network; writes `net.txt`, `history.csv`, `config.txt`
/// and `summary.json`.
pub fn train(ctx: &Context, args: TrainArgs) -> CliResult<()> {
    let mut cfg = apply_overrides(&base_config(&args)?, &args.overrides)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let data = args.data.load(&ctx.data_dir, ctx.seed)?;
    let mut dims = vec![data.dim()];
    dims.extend(&args.hidden);
    dims.push(data.classes);
    let mut net = Network::build(&dims, cfg.seed)?;
    let dir = out_dir(&args.out)?;
    let start = Instant::now();
    let history = training::train_with(&mut net, &data, &cfg, |s| {
        println!(
            "epoch {:>3}  eps {:.4}  kappa {:.3}  nat_loss {:.4}  cert_loss {:.4}  nat_acc {:.4}",
            s.epoch, s.eps, s.kappa, s.nat_loss, s.cert_loss, s.nat_acc
        );
    })?;
    net.save(dir.join("net.txt"))?;
    write_output(dir, "history.csv", &history_csv(&history))?;
    write_output(dir, "config.txt", &cfg.to_text())?;
    write_json(
        dir,
        "summary.json",
        &json!({
            "dataset": data.split,
            "examples": data.len(),
            "dims": dims,
            "kind": cfg.kind.to_string(),
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "final": history.last(),
        }),
    )?;
    println!(
        "trained {:?} with {} on {} examples in {:.1?}; wrote {}",
        dims,
        cfg.kind,
        data.len(),
        start.elapsed(),
        dir.display()
    );
    Ok(())
}

/// Writes `report.json` with accuracy, PGD and certified robustness.
pub fn certify(ctx: &Context, args: CertifyArgs) -> CliResult<()> {
    let net = load_net(&args.net)?;
    let data = args.data.load(&ctx.data_dir, ctx.seed)?;
    check_compatible(&net, &data)?;
    let opts = certify_options(&args.certify);
    let pgd = PgdOptions {
        steps: args.pgd_steps,
        step_size: args.pgd_step_size,
        restarts: args.pgd_restarts,
        seed: ctx.seed.unwrap_or(0),
        clip: opts.clip,
    };
    let report = evaluation::evaluate(&net, &data, args.eps, &args.kinds, &opts, &pgd)?;
    let dir = out_dir(&args.out)?;
    write_json(dir, "report.json", &report)?;
    println!("n {}  eps {}  accuracy {:.4}  pgd {:.4}", report.n, report.eps, report.acc, report.pgd);
    for (kind, cr) in &report.cr {
        println!("  certified ({kind}): {cr:.4}");
    }
    Ok(())
}

/// Writes `curve.csv` (`eps,certified`) and `auc.json`.
pub fn curve(ctx: &Context, args: CurveArgs) -> CliResult<()> {
    let net = load_net(&args.net)?;
    let data = args.data.load(&ctx.data_dir, ctx.seed)?;
    check_compatible(&net, &data)?;
    if args.eps_max < 0.0 {
        return Err(CliError::Usage(format!("negative eps-max {}", args.eps_max)));
    }
    let c = evaluation::cr_curve(&net, args.kind, &data, args.eps_max, args.samples, &certify_options(&args.certify))?;
    let dir = out_dir(&args.out)?;
    write_output(dir, "curve.csv", &c.to_csv())?;
    let auc = evaluation::cr_auc(&c, false);
    write_json(
        dir,
        "auc.json",
        &json!({
            "kind": c.kind.name(),
            "slice": c.slice,
            "eps_max": args.eps_max,
            "samples": args.samples,
            "auc": auc,
            "auc_percent": evaluation::cr_auc(&c, true),
        }),
    )?;
    println!("{} on {}: CR-AUC {auc:.6} over [0, {}]", c.kind, c.slice, args.eps_max);
    Ok(())
}

/// Writes `cross.csv` with one row per network.
pub fn cross(ctx: &Context, args: CrossArgs) -> CliResult<()> {
    let data = args.data.load(&ctx.data_dir, ctx.seed)?;
    let opts = certify_options(&args.certify);
    let mut rows = Vec::with_capacity(args.nets.len());
    for spec in &args.nets {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--net {spec:?} is not label=path")))?;
        let net = load_net(Path::new(path))?;
        check_compatible(&net, &data)?;
        let row = evaluation::cross_matrix(&net, label, &args.kinds, &data, args.eps, &opts)?;
        let cells: Vec<String> = row.cr.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        println!("{label}: {}", cells.join("  "));
        rows.push(row);
    }
    write_output(out_dir(&args.out)?, "cross.csv", &evaluation::cross_csv(&rows))
}

/// Writes `sweep.csv` with one column per relaxation.
pub fn sweep(ctx: &Context, args: SweepArgs) -> CliResult<()> {
    let net = load_net(&args.net)?;
    let data = args.data.load(&ctx.data_dir, ctx.seed)?;
    check_compatible(&net, &data)?;
    let x = data
        .inputs
        .get(args.example)
        .ok_or_else(|| CliError::Usage(format!("example {} out of range ({} loaded)", args.example, data.len())))?;
    let input = InputBox::around(x, args.eps, (!args.no_clip).then_some((0.0, 1.0)))?;
    let target = args.target.unwrap_or(data.labels[args.example]);
    let first = *args.kinds.first().ok_or_else(|| CliError::Usage("no relaxation given".into()))?;
    let result = diagnostics::delta_sweep(
        &net,
        &args.kinds,
        args.direction_kind.unwrap_or(first),
        &input,
        target,
        args.delta_max,
        args.points,
    )?;
    write_output(out_dir(&args.out)?, "sweep.csv", &result.to_csv())?;
    for (kind, values) in result.kinds.iter().zip(&result.values) {
        let mid = values[values.len() / 2];
        println!("{kind}: l[{target}] at δ=0 {mid:.6}, kinks {}", kink_count(values, 1e-9));
    }
    Ok(())
}

/// Writes `landscape.csv` (every step) and `landscape.json` (per-run
/// summary).
pub fn landscape(ctx: &Context, args: LandscapeArgs) -> CliResult<()> {
    let seed = ctx.seed.unwrap_or(0);
    let mut csv = String::from("instance,kind,step,delta,value\n");
    let mut runs = Vec::new();
    for k in 0..args.instances {
        let inst = LandscapeInstance::sample(seed.wrapping_add(k as u64));
        for &kind in &args.kinds {
            let run = diagnostics::landscape_gd(&inst, kind, args.lr, args.lr_decay, args.epochs, args.target)?;
            for (step, (d, v)) in run.trajectory.iter().enumerate() {
                csv.push_str(&format!("{k},{kind},{step},{d},{v}\n"));
            }
            let (first, last) = (run.trajectory[0].1, run.trajectory[run.trajectory.len() - 1].1);
            runs.push(json!({
                "instance": k,
                "kind": kind.name(),
                "start": first,
                "end": last,
                "max_drop": run.max_drop(),
            }));
            println!("instance {k} {kind}: {first:.4} → {last:.4}, largest drop {:.4}", run.max_drop());
        }
    }
    let dir = out_dir(&args.out)?;
    write_output(dir, "landscape.csv", &csv)?;
    write_json(dir, "landscape.json", &runs)
}

/// Writes `minimal.json`; fails when any curve deviates.
pub fn minimal_examples(args: OutArgs) -> CliResult<()> {
    let report = diagnostics::minimal_examples()?;
    write_json(out_dir(&args)?, "minimal.json", &report)?;
    for c in &report.checks {
        let jumps: Vec<String> = c.jumps.iter().map(|j| format!("{:.6} at {:.6}", j.magnitude, j.lo)).collect();
        println!(
            "{} {}: max deviation {:.3e}, jumps [{}] (expected {} at {}) {}",
            c.relaxation,
            c.bound,
            c.max_deviation,
            jumps.join(", "),
            c.expected_magnitude,
            c.expected_jump_at,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed("minimal examples deviate from their closed forms".into()))
    }
}

/// Writes `lp_check.json`; fails when an equivalence or dominance breaks.
pub fn lp_check(ctx: &Context, args: LpCheckArgs) -> CliResult<()> {
    let report = diagnostics::lp_check(args.cases, ctx.seed.unwrap_or(0))?;
    write_json(out_dir(&args.out)?, "lp_check.json", &report)?;
    println!(
        "{} cases: BoxLP gap {:.2e}, DeepZLP gap {:.2e}, Triangle slack {:.2e} (tolerance {:.0e}) {}",
        report.cases,
        report.box_lp_gap,
        report.deepz_lp_gap,
        report.triangle_slack,
        diagnostics::LP_CHECK_TOL,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if report.pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed("LP encodings disagree".into()))
    }
}

/// Writes `<name>.cfg` for every preset.
pub fn fetch_presets(args: OutArgs) -> CliResult<()> {
    let dir = out_dir(&args)?;
    for (name, cfg) in training::presets() {
        write_output(dir, &format!("{name}.cfg"), &cfg.to_text())?;
        println!("{}", dir.join(format!("{name}.cfg")).display());
    }
    Ok(())
}
