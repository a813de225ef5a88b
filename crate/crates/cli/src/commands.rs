use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lipcert::forward_bounds::{BoundOptions, IntermediateMethod, LowerSlopePolicy};
use lipcert::jacobian_bounds::lipschitz_upper_bound_with;
use lipcert::model::{random_mlp, random_point};
use lipcert::oracle::{enumerate_pattern_upper_bound, sample_lower_bound};
use lipcert::{
    jacobian_entry_bounds, lipschitz_upper_bound, load_network, naive_upper_bound, run_bab, BabConfig,
    BoundMode, BoxDomain, Error, Network,
};
use ndarray::Array1;
use serde_json::{json, Value};

use crate::domain::{broadcast, resolve};
use crate::error::{CliError, CliResult};
use crate::report::{emit, file_hash, DomainEcho, ModeRow, Record};
use crate::{
    BabArgs, BabOptionArgs, BoundArgs, CompareArgs, GenArgs, IntermediateArg, ModeArg, MonotoneArgs, OracleArgs,
    SlopeArg,
};

/// Slack allowed when checking that modes are ordered.
const DOMINANCE_TOL: f64 = 1e-9;
/// Center seeds for generated domains are derived from the model seed.
const DOMAIN_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn load(path: &Path) -> CliResult<(Network, String)> {
    let hash = file_hash(path)?;
    Ok((load_network(path)?, hash))
}

fn mode_of(m: ModeArg) -> BoundMode {
    match m {
        ModeArg::Linear => BoundMode::Linear,
        ModeArg::Interval => BoundMode::Interval,
        ModeArg::Naive => BoundMode::Naive,
    }
}

fn bab_config(a: &BabOptionArgs) -> CliResult<BabConfig> {
    if !(a.time_limit >= 0.0) || !a.time_limit.is_finite() {
        return Err(CliError::Input(format!(
            "time limit must be a finite non-negative number of seconds, got {}",
            a.time_limit
        )));
    }
    let cfg = BabConfig {
        batch_size: a.batch,
        time_limit: Duration::from_secs_f64(a.time_limit),
        max_domains: a.max_domains,
        split_margin: a.split_margin,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn bound(a: &BoundArgs) -> CliResult<ExitCode> {
    let (net, hash) = load(&a.model.model)?;
    let domain = resolve(&a.domain, net.input_dim())?;
    let opts = BoundOptions {
        intermediate: match a.options.intermediate {
            IntermediateArg::Linear => IntermediateMethod::Linear,
            IntermediateArg::Interval => IntermediateMethod::Interval,
        },
        lower_slope: match a.options.lower_slope {
            SlopeArg::Adaptive => LowerSlopePolicy::Adaptive,
            SlopeArg::Zero => LowerSlopePolicy::Zero,
            SlopeArg::One => LowerSlopePolicy::One,
        },
    };
    let mode = mode_of(a.mode);
    let report = lipschitz_upper_bound_with(&net, &domain, mode, None, &opts)?;

    let mut r = Record::new("bound", &a.model.model, hash, mode.as_str());
    r.domain = Some(DomainEcho::from(&domain));
    r.bound = report.bound;
    r.row_bounds = Some(report.row_bounds());
    r.runtime_s = report.runtime_s;
    emit(&r, a.output.format, a.output.out.as_ref())?;
    Ok(ExitCode::SUCCESS)
}

fn bab_value(res: &lipcert::BabResult, cfg: &BabConfig) -> Value {
    json!({
        "initial_bound": res.initial_bound,
        "domains_explored": res.domains_explored,
        "domains_pruned": res.domains_pruned,
        "history": res.history,
        "complete": res.complete,
        "runtime_s": res.runtime_s,
        "config": {
            "time_limit_s": cfg.time_limit.as_secs_f64(),
            "batch": cfg.batch_size,
            "max_domains": cfg.max_domains,
            "split_margin": cfg.split_margin,
        },
    })
}

pub fn bab(a: &BabArgs) -> CliResult<ExitCode> {
    let (net, hash) = load(&a.model.model)?;
    let domain = resolve(&a.domain, net.input_dim())?;
    let cfg = bab_config(&a.bab)?;
    let res = run_bab(&net, &domain, &cfg)?;

    let mut r = Record::new("bab", &a.model.model, hash, "bab");
    r.domain = Some(DomainEcho::from(&domain));
    r.bound = res.bound;
    r.runtime_s = res.runtime_s;
    r.bab = Some(bab_value(&res, &cfg));
    emit(&r, a.output.format, a.output.out.as_ref())?;
    Ok(ExitCode::SUCCESS)
}

pub fn oracle(a: &OracleArgs) -> CliResult<ExitCode> {
    let (net, hash) = load(&a.model.model)?;
    let domain = resolve(&a.domain, net.input_dim())?;
    if a.samples == 0 {
        return Err(CliError::Input("--samples must be at least 1".into()));
    }
    let started = Instant::now();
    let samples = sample_lower_bound(&net, &domain, a.samples, a.seed)?;
    let linear = lipschitz_upper_bound(&net, &domain, BoundMode::Linear, None)?;
    let (pattern, refused) = match enumerate_pattern_upper_bound(&net, &domain) {
        Ok(p) => (
            json!({
                "upper_bound": p.upper_bound,
                "unstable": p.unstable,
                "patterns_total": p.patterns_total,
                "patterns_feasible": p.patterns_feasible,
            }),
            Value::Null,
        ),
        Err(e @ Error::TooManyUnstable { .. }) => (Value::Null, Value::String(e.to_string())),
        Err(e) => return Err(e.into()),
    };

    let mut r = Record::new("oracle", &a.model.model, hash, "linear");
    r.domain = Some(DomainEcho::from(&domain));
    r.bound = linear.bound;
    r.row_bounds = Some(linear.row_bounds());
    r.runtime_s = started.elapsed().as_secs_f64();
    r.oracle = Some(json!({
        "lower_bound": samples.lower_bound,
        "argmax_x": samples.argmax_x.to_vec(),
        "samples": samples.samples,
        "seed": samples.seed,
        "linear_bound": linear.bound,
        "pattern": pattern,
        "pattern_refused": refused,
    }));
    emit(&r, a.output.format, a.output.out.as_ref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Increasing,
    Decreasing,
    Unknown,
}

impl Verdict {
    fn from_bounds(lower: f64, upper: f64) -> Self {
        if lower > 0.0 {
            Verdict::Increasing
        } else if upper < 0.0 {
            Verdict::Decreasing
        } else {
            Verdict::Unknown
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Verdict::Increasing => "increasing",
            Verdict::Decreasing => "decreasing",
            Verdict::Unknown => "unknown",
        }
    }
}

fn read_baselines(path: &Path, dim: usize) -> CliResult<Vec<Array1<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: expected an array of inputs: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::Input(format!("{} holds no baselines", path.display())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != dim {
                return Err(CliError::Input(format!(
                    "baseline {i} has dimension {} but the model input has dimension {dim}",
                    row.len()
                )));
            }
            Ok(Array1::from(row.clone()))
        })
        .collect()
}

fn percentages(counts: [usize; 3]) -> Value {
    let total = counts.iter().sum::<usize>().max(1) as f64;
    json!({
        "increasing": 100.0 * counts[0] as f64 / total,
        "decreasing": 100.0 * counts[1] as f64 / total,
        "unknown": 100.0 * counts[2] as f64 / total,
    })
}

fn tally(counts: &mut [usize; 3], v: Verdict) {
    counts[match v {
        Verdict::Increasing => 0,
        Verdict::Decreasing => 1,
        Verdict::Unknown => 2,
    }] += 1;
}

pub fn monotone(a: &MonotoneArgs) -> CliResult<ExitCode> {
    let (net, hash) = load(&a.model.model)?;
    let (d, k) = (net.input_dim(), net.output_dim());
    let baselines = match (&a.baseline, &a.baselines) {
        (Some(b), None) => vec![broadcast(b, d, "baseline")?],
        (None, Some(path)) => read_baselines(path, d)?,
        _ => return Err(CliError::Input("give exactly one of --baseline or --baselines".into())),
    };
    let range_lo = broadcast(&a.range_lo, d, "range-lo")?;
    let range_hi = broadcast(&a.range_hi, d, "range-hi")?;
    if let Some(j) = (0..d).find(|&j| !(range_lo[j] <= range_hi[j])) {
        return Err(CliError::Input(format!(
            "range of feature {j} is inverted: {} > {}",
            range_lo[j], range_hi[j]
        )));
    }

    let started = Instant::now();
    let mut verdicts = Vec::with_capacity(baselines.len());
    let mut lowers = Vec::with_capacity(baselines.len());
    let mut uppers = Vec::with_capacity(baselines.len());
    let mut overall = [0usize; 3];
    let mut per_feature = vec![vec![[0usize; 3]; d]; k];
    let mut bound = 0.0f64;
    for base in &baselines {
        let mut v = vec![vec![""; d]; k];
        let mut lo_m = vec![vec![0.0; d]; k];
        let mut hi_m = vec![vec![0.0; d]; k];
        for j in 0..d {
            let mut lo = base.clone();
            let mut hi = base.clone();
            lo[j] = range_lo[j];
            hi[j] = range_hi[j];
            let domain = BoxDomain::new(lo, hi)?;
            let (l1, u1) = jacobian_entry_bounds(&net, &domain)?;
            bound = bound.max(lipschitz_upper_bound(&net, &domain, BoundMode::Linear, None)?.bound);
            for c in 0..k {
                let verdict = Verdict::from_bounds(l1[[c, j]], u1[[c, j]]);
                v[c][j] = verdict.as_str();
                lo_m[c][j] = l1[[c, j]];
                hi_m[c][j] = u1[[c, j]];
                tally(&mut overall, verdict);
                tally(&mut per_feature[c][j], verdict);
            }
        }
        verdicts.push(v);
        lowers.push(lo_m);
        uppers.push(hi_m);
    }

    let mut r = Record::new("monotone", &a.model.model, hash, "linear");
    r.domain = Some(DomainEcho {
        lo: range_lo.to_vec(),
        hi: range_hi.to_vec(),
        eps: (&range_hi - &range_lo).iter().fold(0.0, |m, w| m.max(0.5 * w)),
    });
    r.bound = bound;
    r.runtime_s = started.elapsed().as_secs_f64();
    r.monotone = Some(json!({
        "features": d,
        "classes": k,
        "baselines": baselines.len(),
        "verdicts": verdicts,
        "lower": lowers,
        "upper": uppers,
        "summary": percentages(overall),
        "per_feature": per_feature
            .iter()
            .map(|row| row.iter().map(|c| percentages(*c)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    }));
    emit(&r, a.output.format, a.output.out.as_ref())?;
    Ok(ExitCode::SUCCESS)
}

pub fn compare(a: &CompareArgs) -> CliResult<ExitCode> {
    let (net, hash) = load(&a.model.model)?;
    let domain = resolve(&a.domain, net.input_dim())?;
    let started = Instant::now();
    let mut rows = Vec::new();
    for mode in [BoundMode::Naive, BoundMode::Interval, BoundMode::Linear] {
        let rep = lipschitz_upper_bound(&net, &domain, mode, None)?;
        rows.push(ModeRow {
            mode: mode.as_str().to_string(),
            bound: rep.bound,
            runtime_s: rep.runtime_s,
        });
    }
    let mut bab = None;
    if a.with_bab {
        let cfg = bab_config(&a.bab)?;
        let res = run_bab(&net, &domain, &cfg)?;
        rows.push(ModeRow {
            mode: "bab".into(),
            bound: res.bound,
            runtime_s: res.runtime_s,
        });
        bab = Some(bab_value(&res, &cfg));
    }

    // Each row must be no looser than the one before it.
    let violations: Vec<String> = rows
        .windows(2)
        .filter(|w| w[1].bound > w[0].bound + DOMINANCE_TOL)
        .map(|w| format!("{} ({}) exceeds {} ({})", w[1].mode, w[1].bound, w[0].mode, w[0].bound))
        .collect();

    let mut r = Record::new("compare", &a.model.model, hash, "compare");
    r.domain = Some(DomainEcho::from(&domain));
    r.bound = rows.iter().map(|row| row.bound).fold(f64::INFINITY, f64::min);
    r.runtime_s = started.elapsed().as_secs_f64();
    r.bab = bab;
    r.compare = Some(rows);
    emit(&r, a.output.format, a.output.out.as_ref())?;

    if violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            eprintln!("dominance violated: {v}");
        }
        Ok(ExitCode::from(3))
    }
}

pub fn gen(a: &GenArgs) -> CliResult<ExitCode> {
    if !(a.eps >= 0.0) || !a.eps.is_finite() {
        return Err(CliError::Input(format!("eps must be a finite non-negative number, got {}", a.eps)));
    }
    let net = random_mlp(&a.sizes, a.seed)?;
    net.save(&a.model_out)?;
    let hash = file_hash(&a.model_out)?;

    let mut r = Record::new("gen", &a.model_out, hash, BoundMode::Naive.as_str());
    r.bound = naive_upper_bound(&net);
    if let Some(path) = &a.domain_out {
        let center = random_point(net.input_dim(), a.seed ^ DOMAIN_SEED_SALT);
        let text = serde_json::to_string_pretty(&json!({ "center": center.to_vec(), "eps": a.eps }))
            .expect("domain serializes");
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
        r.domain = Some(DomainEcho::from(&BoxDomain::ball(center.view(), a.eps)?));
    }
    emit(&r, a.output.format, a.output.out.as_ref())?;
    Ok(ExitCode::SUCCESS)
}
