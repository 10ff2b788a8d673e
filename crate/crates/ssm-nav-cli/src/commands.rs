//! Command implementations. Every command owns its output directory, echoes
//! the effective config there, and writes a manifest listing its artifacts.

use crate::config::RunConfig;
use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use ssm_nav::dataset;
use ssm_nav::env::{generate_environment, make_episode, Episode, EnvironmentGraph, Geodesics};
use ssm_nav::metrics::MetricReport;
use ssm_nav::planner::{run_episode, DecisionMode, Forcing, RolloutOptions, Sampling};
use ssm_nav::policy::ParamSet;
use ssm_nav::render::render_rollout;
use ssm_nav::trainer::{self, evaluate, grad_check, il_loss, EnvTable, TrainConfig};
use std::path::Path;

/// Exit code 3: an acceptance threshold was not met.
#[derive(Debug)]
pub struct ThresholdFailure(pub String);

impl std::fmt::Display for ThresholdFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "threshold failure: {}", self.0)
    }
}

impl std::error::Error for ThresholdFailure {}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_manifest(out: &Path, command: &str, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out.join("manifest.json"), text)?;
    Ok(())
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output dir {}", out.display()))?;
    crate::config::echo_config(cfg, out)?;
    Ok(())
}

fn generate_envs(cfg: &RunConfig, seed_start: u64, count: usize) -> Result<Vec<EnvironmentGraph>> {
    let params = cfg.env.env_params();
    (0..count)
        .map(|i| {
            generate_environment(seed_start + i as u64, &params)
                .with_context(|| format!("generating environment {}", seed_start + i as u64))
        })
        .collect()
}

fn generate_episode_set(
    cfg: &RunConfig,
    envs: &[EnvironmentGraph],
    per_env: usize,
    seed_start: u64,
) -> Result<Vec<Episode>> {
    let params = cfg.episodes.episode_params();
    let mut episodes = Vec::new();
    for env in envs {
        let geo = Geodesics::new(env);
        let mut found = 0;
        let mut seed = seed_start;
        let mut failures = 0;
        while found < per_env {
            match make_episode(env, &geo, seed, &params) {
                Ok(e) => {
                    episodes.push(e);
                    found += 1;
                }
                Err(_) => {
                    failures += 1;
                    if failures > per_env * 20 + 200 {
                        bail!(
                            "env {} cannot satisfy episode constraints ({} found of {})",
                            env.seed,
                            found,
                            per_env
                        );
                    }
                }
            }
            seed += 1;
        }
    }
    Ok(episodes)
}

pub fn gen_env(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(out, cfg)?;
    let envs = generate_envs(cfg, cfg.env.seed_start, cfg.env.count)?;
    let path = out.join("envs.jsonl");
    dataset::save_envs(&path, &envs)?;
    write_manifest(out, "gen-env", &[], &["config.toml", "envs.jsonl"])?;
    println!("wrote {} environments to {}", envs.len(), path.display());
    Ok(())
}

pub fn gen_episodes(cfg: &RunConfig, envs_path: &Path, out: &Path) -> Result<()> {
    prepare_out(out, cfg)?;
    let envs = dataset::load_envs(envs_path)?;
    let episodes = generate_episode_set(cfg, &envs, cfg.episodes.per_env, cfg.episodes.seed_start)?;
    let path = out.join("episodes.jsonl");
    dataset::save_episodes(&path, &episodes)?;
    write_manifest(
        out,
        "gen-episodes",
        &[envs_path],
        &["config.toml", "episodes.jsonl"],
    )?;
    println!("wrote {} episodes to {}", episodes.len(), path.display());
    Ok(())
}

fn curve_csv(curve: &[trainer::CurveRow], epoch_offset: usize) -> String {
    let mut out = String::from("epoch,il_loss,mean_return,eval_sr,eval_spl,eval_ndtw\n");
    for row in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch + epoch_offset,
            row.il_loss,
            row.mean_return,
            row.eval_sr,
            row.eval_spl,
            row.eval_ndtw
        ));
    }
    out
}

#[derive(Serialize, serde::Deserialize, Default)]
struct TrainState {
    epochs_done: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    cfg: &RunConfig,
    envs_path: &Path,
    episodes_path: &Path,
    eval_envs_path: Option<&Path>,
    eval_episodes_path: Option<&Path>,
    resume: Option<&Path>,
    out: &Path,
) -> Result<()> {
    prepare_out(out, cfg)?;
    let envs = dataset::load_envs(envs_path)?;
    let episodes = dataset::load_episodes(episodes_path)?;
    let table = EnvTable::new(envs);

    // Held-out split: explicit files when given, else the tail 20 percent.
    let (train_eps, eval_table_owned, eval_eps): (Vec<Episode>, Option<EnvTable>, Vec<Episode>) =
        match (eval_envs_path, eval_episodes_path) {
            (Some(ev), Some(ee)) => {
                let eval_envs = dataset::load_envs(ev)?;
                let eval_eps = dataset::load_episodes(ee)?;
                (episodes, Some(EnvTable::new(eval_envs)), eval_eps)
            }
            (None, None) => {
                let cut = episodes.len() - episodes.len() / 5;
                let (a, b) = episodes.split_at(cut);
                (a.to_vec(), None, b.to_vec())
            }
            _ => bail!("--eval-envs and --eval-episodes must be given together"),
        };
    let eval_table = eval_table_owned.as_ref().unwrap_or(&table);

    let dims = cfg.model.dims(&cfg.env);
    let tcfg: TrainConfig = cfg.train.train_config();
    let (init, epoch_offset) = match resume {
        Some(ckpt) => {
            let params = ParamSet::load(ckpt).map_err(|e| anyhow!(e.to_string()))?;
            let state: TrainState = std::fs::read_to_string(out.join("state.json"))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok())
                .unwrap_or_default();
            (Some(params), state.epochs_done)
        }
        None => (None, 0),
    };

    let result = trainer::train(&table, &train_eps, eval_table, &eval_eps, dims, &tcfg, init)
        .map_err(|e| anyhow!("training failed: {e}"))?;

    result
        .params
        .save(&out.join("best.ckpt.json"))
        .map_err(|e| anyhow!(e.to_string()))?;
    result
        .final_params
        .save(&out.join("final.ckpt.json"))
        .map_err(|e| anyhow!(e.to_string()))?;
    let mut curve_path_content = curve_csv(&result.curve, epoch_offset);
    let curve_path = out.join("curve.csv");
    if epoch_offset > 0 && curve_path.exists() {
        let old = std::fs::read_to_string(&curve_path)?;
        let appended: String = curve_path_content.lines().skip(1).collect::<Vec<_>>().join("\n");
        curve_path_content = format!("{old}{appended}\n");
    }
    std::fs::write(&curve_path, curve_path_content)?;
    std::fs::write(
        out.join("state.json"),
        serde_json::to_string(&TrainState {
            epochs_done: epoch_offset + tcfg.max_epochs,
        })?,
    )?;
    write_manifest(
        out,
        "train",
        &[envs_path, episodes_path],
        &[
            "config.toml",
            "best.ckpt.json",
            "final.ckpt.json",
            "curve.csv",
            "state.json",
        ],
    )?;
    println!(
        "trained {} epochs; best eval SR {:.3}",
        tcfg.max_epochs, result.best_sr
    );
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    envs_path: &Path,
    episodes_path: &Path,
    mode: Option<DecisionMode>,
    out: &Path,
) -> Result<()> {
    prepare_out(out, cfg)?;
    let params = ParamSet::load(checkpoint).map_err(|e| anyhow!(e.to_string()))?;
    let envs = dataset::load_envs(envs_path)?;
    let episodes = dataset::load_episodes(episodes_path)?;
    let table = EnvTable::new(envs);
    let mode = mode.unwrap_or(cfg.eval.mode);
    let (report, _) = evaluate(
        &table,
        &episodes,
        &params,
        mode,
        cfg.eval.max_rounds,
        cfg.eval.match_eps,
        cfg.eval.distance,
    )
    .map_err(|e| anyhow!("evaluation failed: {e}"))?;
    write_report(&report, out)?;
    write_manifest(
        out,
        "eval",
        &[checkpoint, envs_path, episodes_path],
        &["config.toml", "report.json", "report.csv"],
    )?;
    println!(
        "evaluated {} episodes ({mode}): SR {:.3} SPL {:.3} CLS {:.3} nDTW {:.3}",
        report.count, report.means.sr, report.means.spl, report.means.cls, report.means.ndtw
    );
    Ok(())
}

fn write_report(report: &MetricReport, out: &Path) -> Result<()> {
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    Ok(())
}

pub fn rollout(
    cfg: &RunConfig,
    checkpoint: &Path,
    envs_path: &Path,
    episodes_path: &Path,
    episode_id: u64,
    out: &Path,
) -> Result<()> {
    prepare_out(out, cfg)?;
    let params = ParamSet::load(checkpoint).map_err(|e| anyhow!(e.to_string()))?;
    let envs = dataset::load_envs(envs_path)?;
    let episodes = dataset::load_episodes(episodes_path)?;
    let episode = episodes
        .iter()
        .find(|e| e.id == episode_id)
        .ok_or_else(|| anyhow!("episode id {episode_id} not found"))?;
    let env = envs
        .iter()
        .find(|e| e.seed == episode.env_seed)
        .ok_or_else(|| anyhow!("env seed {} not in {}", episode.env_seed, envs_path.display()))?;
    let geo = Geodesics::new(env);
    let opts = RolloutOptions {
        mode: cfg.eval.mode,
        sampling: Sampling::Greedy,
        forcing: Forcing::Free,
        max_rounds: cfg.eval.max_rounds,
        match_eps: cfg.eval.match_eps,
        seed: 0,
    };
    let r = run_episode(env, &geo, episode, &params, &opts)
        .map_err(|e| anyhow!("rollout failed: {e}"))?;

    // One JSONL record per decision round, preceded by the format header.
    let mut lines = vec![format!("{{\"format\":\"{}\"}}", dataset::FORMAT)];
    for rec in &r.trajectory.records {
        lines.push(serde_json::to_string(rec)?);
    }
    std::fs::write(out.join("trajectory.jsonl"), lines.join("\n") + "\n")?;
    std::fs::write(
        out.join("trajectory.json"),
        serde_json::to_string_pretty(&r.trajectory)?,
    )?;
    std::fs::write(
        out.join("rollout.svg"),
        render_rollout(env, episode, &r.trajectory.path),
    )?;
    write_manifest(
        out,
        "rollout",
        &[checkpoint, envs_path, episodes_path],
        &[
            "config.toml",
            "trajectory.jsonl",
            "trajectory.json",
            "rollout.svg",
        ],
    )?;
    println!(
        "episode {episode_id}: {} rounds, stop reason {:?}",
        r.trajectory.records.len(),
        r.trajectory.stop_reason
    );
    Ok(())
}

pub fn grad_check_cmd(
    cfg: &RunConfig,
    threshold: f64,
    corrupt: bool,
    out: &Path,
) -> Result<()> {
    prepare_out(out, cfg)?;
    // Tiny probe world; dims follow the config's model section but stay
    // small via the env overrides baked into the default grad-check config.
    let env_params = ssm_nav::env::EnvParams {
        n_nodes: 8,
        d_f: 4,
        tiling: 1,
        vocab: 5,
        noise_sigma: 0.05,
        ..Default::default()
    };
    let dims = ssm_nav::policy::ModelDims {
        d_x: 4,
        d_f: 4,
        tiling: 1,
        d_h: 4,
        s_steps: 2,
        n_tokens: 6 + 5,
        grounding: true,
    };
    let env = generate_environment(61, &env_params)?;
    let geo = Geodesics::new(&env);
    let ep_params = ssm_nav::env::EpisodeParams {
        min_len: 2,
        trap_branches: 0,
        ..Default::default()
    };
    let episode = make_episode(&env, &geo, 1, &ep_params)?;
    let opts = RolloutOptions {
        mode: cfg.train.mode,
        sampling: Sampling::Greedy,
        forcing: Forcing::Teacher,
        max_rounds: 6,
        match_eps: 0.5,
        seed: 0,
    };
    let loss_and_grad = |p: &ParamSet| -> (f64, Vec<f64>) {
        let mut r = run_episode(&env, &geo, &episode, p, &opts).expect("probe rollout");
        il_loss(&mut r, p)
    };
    let params = ParamSet::seeded(dims, cfg.train.seed);
    let (_, mut analytic) = loss_and_grad(&params);
    if corrupt {
        for v in analytic.iter_mut().take(8) {
            *v += 0.75;
        }
    }
    let report = grad_check(&params, &|p| loss_and_grad(p).0, &analytic, 1e-5, 3, 7);
    std::fs::write(
        out.join("grad_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    write_manifest(out, "grad-check", &[], &["config.toml", "grad_report.json"])?;
    println!(
        "grad check: {} coords, max rel err {:.3e} (threshold {threshold:.1e})",
        report.coords_checked, report.max_rel_err
    );
    if !report.passed(threshold) {
        return Err(ThresholdFailure(format!(
            "max relative error {:.3e} >= {threshold:.1e}",
            report.max_rel_err
        ))
        .into());
    }
    Ok(())
}

struct Variant {
    name: &'static str,
    mode: DecisionMode,
    s_steps: Option<usize>,
    grounding: bool,
}

const VARIANTS: [Variant; 5] = [
    Variant {
        name: "full_frontier",
        mode: DecisionMode::Frontier,
        s_steps: None,
        grounding: true,
    },
    Variant {
        name: "local",
        mode: DecisionMode::Local,
        s_steps: None,
        grounding: true,
    },
    Variant {
        name: "global_onestep",
        mode: DecisionMode::GlobalOnestep,
        s_steps: None,
        grounding: true,
    },
    Variant {
        name: "no_reasoning",
        mode: DecisionMode::Frontier,
        s_steps: Some(0),
        grounding: true,
    },
    Variant {
        name: "no_grounding",
        mode: DecisionMode::Frontier,
        s_steps: None,
        grounding: false,
    },
];

/// Train and evaluate the decision-mode comparison plus the two module
/// toggles from identical seeds, then check the expected ordering.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(out, cfg)?;
    let ab = &cfg.ablate;
    let train_envs = generate_envs(cfg, ab.train_env_seed_start, ab.train_env_count)?;
    let eval_envs = generate_envs(cfg, ab.eval_env_seed_start, ab.eval_env_count)?;
    let train_eps = generate_episode_set(cfg, &train_envs, ab.train_per_env, cfg.episodes.seed_start)?;
    let eval_eps =
        generate_episode_set(cfg, &eval_envs, ab.eval_per_env, cfg.episodes.seed_start + 50_000)?;
    dataset::save_envs(&out.join("train.envs.jsonl"), &train_envs)?;
    dataset::save_envs(&out.join("eval.envs.jsonl"), &eval_envs)?;
    dataset::save_episodes(&out.join("train.episodes.jsonl"), &train_eps)?;
    dataset::save_episodes(&out.join("eval.episodes.jsonl"), &eval_eps)?;
    let train_table = EnvTable::new(train_envs);
    let eval_table = EnvTable::new(eval_envs);

    let mut rows = Vec::new();
    let mut srs = std::collections::BTreeMap::new();
    for v in VARIANTS.iter() {
        let mut dims = cfg.model.dims(&cfg.env);
        if let Some(s) = v.s_steps {
            dims.s_steps = s;
        }
        dims.grounding = v.grounding;
        let mut tcfg = cfg.train.train_config();
        tcfg.mode = v.mode;
        let result = trainer::train(
            &train_table,
            &train_eps,
            &eval_table,
            &eval_eps,
            dims,
            &tcfg,
            None,
        )
        .map_err(|e| anyhow!("training variant {}: {e}", v.name))?;
        let (report, _) = evaluate(
            &eval_table,
            &eval_eps,
            &result.params,
            v.mode,
            cfg.eval.max_rounds,
            cfg.eval.match_eps,
            cfg.eval.distance,
        )
        .map_err(|e| anyhow!("evaluating variant {}: {e}", v.name))?;
        let vdir = out.join(v.name);
        std::fs::create_dir_all(&vdir)?;
        result
            .params
            .save(&vdir.join("best.ckpt.json"))
            .map_err(|e| anyhow!(e.to_string()))?;
        std::fs::write(vdir.join("curve.csv"), curve_csv(&result.curve, 0))?;
        write_report(&report, &vdir)?;
        println!(
            "{}: SR {:.3} NE {:.3} TL {:.2} OR {:.3} SPL {:.3} CLS {:.3} nDTW {:.3} SDTW {:.3}",
            v.name,
            report.means.sr,
            report.means.ne,
            report.means.tl,
            report.means.or_rate,
            report.means.spl,
            report.means.cls,
            report.means.ndtw,
            report.means.sdtw
        );
        let m = report.means;
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            v.name, m.sr, m.ne, m.tl, m.or_rate, m.spl, m.cls, m.ndtw, m.sdtw
        ));
        srs.insert(v.name, m.sr);
    }
    let csv = format!(
        "variant,sr,ne,tl,or,spl,cls,ndtw,sdtw\n{}\n",
        rows.join("\n")
    );
    std::fs::write(out.join("ablation.csv"), csv)?;
    write_manifest(
        out,
        "ablate",
        &[],
        &[
            "config.toml",
            "ablation.csv",
            "train.envs.jsonl",
            "eval.envs.jsonl",
            "train.episodes.jsonl",
            "eval.episodes.jsonl",
        ],
    )?;

    let full = srs["full_frontier"];
    let mut violations = Vec::new();
    if full < srs["local"] + ab.sr_margin {
        violations.push(format!(
            "SR(full) {:.3} < SR(local) {:.3} + margin {:.2}",
            full, srs["local"], ab.sr_margin
        ));
    }
    if full < srs["global_onestep"] {
        violations.push(format!(
            "SR(full) {:.3} < SR(global one-step) {:.3}",
            full, srs["global_onestep"]
        ));
    }
    if srs["no_reasoning"] > full + ab.tie_tolerance {
        violations.push(format!(
            "SR(no reasoning) {:.3} > SR(full) {:.3} + tolerance {:.2}",
            srs["no_reasoning"], full, ab.tie_tolerance
        ));
    }
    if srs["no_grounding"] > full + ab.tie_tolerance {
        violations.push(format!(
            "SR(no grounding) {:.3} > SR(full) {:.3} + tolerance {:.2}",
            srs["no_grounding"], full, ab.tie_tolerance
        ));
    }
    if !violations.is_empty() {
        return Err(ThresholdFailure(violations.join("; ")).into());
    }
    println!("ablation ordering satisfied");
    Ok(())
}
