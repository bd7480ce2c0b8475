//! Implementations of the `synth`, `train`, `eval` and `report` commands.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use ubp_core::evaluation::plot::{curve_svg, scatter_svg};
use ubp_core::evaluation::report::{
    curve_to_csv, fusion_to_csv, metrics_to_csv, parse_curve_csv, parse_fusion_csv, parse_metrics_csv,
    parse_subgroup_csv, subgroup_to_csv,
};
use ubp_core::evaluation::{moving_average, FusionRow};
use ubp_core::neural::checkpoint::checkpoint_paths;
use ubp_core::neural::{Checkpoint, Network};
use ubp_core::pipeline::experiment::{build_report, evaluate_fold, fold_plan, job_seed};
use ubp_core::pipeline::{prepare_records, sample_id, train_modality, FoldData};
use ubp_core::synth::export::{parse_labels, read_dataset, read_dataset_manifest, write_dataset};
use ubp_core::synth::{generate_dataset, BpPair, Target};
use ubp_core::uncertainty::Modality;
use ubp_core::{Error, Result};

use crate::config::{check_relative, ConfigFormat, RunConfig, SEED_ENV};
use crate::manifest::{checkpoint_stem, JobRecord, RunManifest, Status};

pub const EVAL_DIR: &str = "eval";
/// Window of the moving average applied to plotted confidence curves.
pub const CURVE_SMOOTHING: usize = 5;
const SCATTER_METHODS: [&str; 4] = ["rppg", "ppg", "img", "uda-fuse"];

/// Flag values that override keys of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub subjects: Option<usize>,
    pub folds: Option<usize>,
    pub epochs: Option<usize>,
    pub modalities: Option<Vec<Modality>>,
}

/// Resolved configuration and working directory of one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub workdir: PathBuf,
    pub config: RunConfig,
    pub seed: u64,
}

impl Context {
    /// Reads the config (relative to `workdir`), applies overrides and resolves the seed.
    pub fn load(workdir: &Path, config_path: Option<&Path>, overrides: &Overrides, env_seed: Option<&str>) -> Result<Self> {
        let mut config = match config_path {
            Some(p) => {
                let path = workdir.join(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                crate::config::parse_run_config(&text, ConfigFormat::from_path(&path))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            config.seed = Some(s);
        }
        if let Some(n) = overrides.subjects {
            config.subjects = n;
        }
        if let Some(f) = overrides.folds {
            config.folds = f;
        }
        if let Some(e) = overrides.epochs {
            config.train.epochs = e;
        }
        if let Some(m) = &overrides.modalities {
            config.modalities = m.clone();
        }
        config.validate()?;
        let seed = config
            .resolve_seed(env_seed)
            .map_err(|e| Error::config(format!("{e} (from {SEED_ENV})")))?;
        Ok(Self {
            workdir: workdir.to_path_buf(),
            config,
            seed,
        })
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.workdir.join(&self.config.dataset_dir)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.workdir.join(&self.config.run_dir)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.run_dir().join(EVAL_DIR)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Generates the synthetic dataset; returns its digest.
pub fn synth(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let records = generate_dataset(cfg.subjects, ctx.seed, &cfg.generator)?;
    let dir = ctx.dataset_dir();
    let manifest = write_dataset(&dir, &records, ctx.seed, cfg.subjects, &cfg.generator)?;
    write_text(&dir.join("synth-config.json"), &cfg.to_json())?;
    Ok(manifest.digest())
}

/// Trains every (fold, modality) job, checkpointing each as it finishes.
///
/// `init_from` names a run directory whose checkpoints seed the networks; the
/// fine-tuning learning rates are used in that case.
pub fn train(ctx: &Context, init_from: Option<&Path>) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let (dataset, records) = read_dataset(&ctx.dataset_dir())?;
    let prepared = prepare_records(&records, dataset.generator.block_grid)?;
    let plan = fold_plan(&prepared, cfg.folds, ctx.seed)?;
    let folds = (0..cfg.folds)
        .map(|f| FoldData::new(&prepared, &plan, f))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, Modality)> = (0..cfg.folds)
        .flat_map(|f| cfg.modalities.iter().map(move |&m| (f, m)))
        .collect();
    let init_nets: HashMap<(usize, Modality), Network> = match init_from {
        Some(dir) => {
            check_relative(dir)?;
            let dir = ctx.workdir.join(dir);
            jobs.iter()
                .map(|&(f, m)| Ok(((f, m), Checkpoint::read(&dir.join(checkpoint_stem(f, m)))?.to_network()?)))
                .collect::<Result<_>>()?
        }
        None => HashMap::new(),
    };
    let train_cfg = if init_from.is_some() {
        cfg.train.for_finetuning()
    } else {
        cfg.train.clone()
    };

    let run_dir = ctx.run_dir();
    fs::create_dir_all(run_dir.join("checkpoints")).map_err(|e| Error::io(&run_dir, e))?;
    write_text(&run_dir.join("train-config.json"), &cfg.to_json())?;
    let manifest = RunManifest {
        status: Status::Incomplete,
        seed: ctx.seed,
        dataset_digest: dataset.digest(),
        fold_plan_digest: plan.digest(),
        fold_plan: plan.clone(),
        init_from: init_from.map(|p| p.display().to_string()),
        config: cfg.clone(),
        jobs: jobs
            .iter()
            .map(|&(f, m)| JobRecord {
                fold: f,
                modality: m,
                status: Status::Incomplete,
                seed: job_seed(ctx.seed, f, m),
                checkpoint: checkpoint_stem(f, m),
                best_epoch: None,
                best_validation_loss: None,
                epochs: Vec::new(),
            })
            .collect(),
    };
    manifest.write(&run_dir)?;

    let shared = Mutex::new(manifest);
    jobs.par_iter().enumerate().try_for_each(|(j, &(f, m))| -> Result<()> {
        let seed = job_seed(ctx.seed, f, m);
        let out = train_modality(m, &folds[f], &train_cfg, seed, init_nets.get(&(f, m)))?;
        let meta = BTreeMap::from([("fold".to_string(), f as f64)]);
        let ck = Checkpoint::from_network(&out.network, seed, out.best_epoch, out.best_validation_loss, meta);
        ck.write(&run_dir.join(checkpoint_stem(f, m)))?;
        let mut manifest = shared.lock().expect("manifest lock");
        let job = &mut manifest.jobs[j];
        job.status = Status::Complete;
        job.best_epoch = Some(out.best_epoch);
        job.best_validation_loss = Some(out.best_validation_loss);
        job.epochs = out.epochs;
        manifest.write(&run_dir)
    })?;

    let mut manifest = shared.into_inner().expect("manifest lock");
    manifest.status = Status::Complete;
    manifest.write(&run_dir)?;
    Ok(manifest)
}

/// Runs inference on every fold, writes the CSV tables, then renders the plots.
pub fn eval(ctx: &Context) -> Result<()> {
    let run_dir = ctx.run_dir();
    let manifest = RunManifest::read(&run_dir)?;
    for f in 0..manifest.config.folds {
        for m in Modality::ALL {
            let stem = run_dir.join(checkpoint_stem(f, m));
            for path in <[PathBuf; 2]>::from(checkpoint_paths(&stem)) {
                if !path.exists() {
                    return Err(Error::MissingInput(path));
                }
            }
        }
    }
    if manifest.status != Status::Complete {
        return Err(Error::usage(format!(
            "run in {} is marked incomplete; re-run train",
            run_dir.display()
        )));
    }

    let (dataset, records) = read_dataset(&ctx.dataset_dir())?;
    if dataset.digest() != manifest.dataset_digest {
        return Err(Error::Integrity {
            path: ctx.dataset_dir(),
            detail: "dataset differs from the one the run was trained on".into(),
        });
    }
    let prepared = prepare_records(&records, dataset.generator.block_grid)?;
    let plan = &manifest.fold_plan;
    let train_cfg = &manifest.config.train;
    let results = (0..plan.fold_count())
        .into_par_iter()
        .map(|f| {
            let fold = FoldData::new(&prepared, plan, f)?;
            let nets: Vec<Network> = Modality::ALL
                .iter()
                .map(|&m| {
                    let stem = run_dir.join(checkpoint_stem(f, m));
                    let net = Checkpoint::read(&stem)?.to_network()?;
                    if *net.spec() != prepared[fold.train[0]].model_spec(m, train_cfg) {
                        return Err(Error::Integrity {
                            path: stem,
                            detail: "architecture does not match the dataset".into(),
                        });
                    }
                    Ok(net)
                })
                .collect::<Result<_>>()?;
            let nets: [Network; 3] = nets.try_into().expect("three modalities");
            evaluate_fold(&fold, &nets, train_cfg, manifest.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = build_report(&results)?;

    let out = ctx.eval_dir();
    write_text(&out.join("metrics.csv"), &metrics_to_csv(&report.metrics))?;
    write_text(&out.join("fusion.csv"), &fusion_to_csv(&report.fusion))?;
    for t in Target::ALL {
        write_text(&out.join(format!("curve_{}.csv", t.name())), &curve_to_csv(&report.curves[&t]))?;
        write_text(
            &out.join(format!("subgroups_{}.csv", t.name())),
            &subgroup_to_csv(&report.subgroups[&t]),
        )?;
    }
    write_text(&out.join("eval-config.json"), &ctx.config.to_json())?;
    render_plots(ctx)
}

fn dataset_labels(dataset_dir: &Path) -> Result<HashMap<String, BpPair>> {
    let manifest = read_dataset_manifest(dataset_dir)?;
    manifest
        .records
        .iter()
        .map(|r| {
            check_relative(Path::new(&r.dir))?;
            let l = parse_labels(&read_text(&dataset_dir.join(&r.dir).join("labels.json"))?)?;
            Ok((sample_id(r.subject_id, r.session), BpPair { sbp: l.sbp, dbp: l.dbp }))
        })
        .collect()
}

fn method_column(row: &FusionRow, method: &str) -> f64 {
    match method {
        "rppg" => row.pred_rppg,
        "ppg" => row.pred_ppg,
        "img" => row.pred_img,
        _ => row.fused,
    }
}

/// Regenerates the SVG figures from the CSV tables in the eval directory.
pub fn render_plots(ctx: &Context) -> Result<()> {
    let out = ctx.eval_dir();
    let fusion = parse_fusion_csv(&read_text(&out.join("fusion.csv"))?)?;
    let labels = dataset_labels(&ctx.dataset_dir())?;
    for t in Target::ALL {
        let rows: Vec<&FusionRow> = fusion.iter().filter(|r| r.target == t.name()).collect();
        let truth = rows
            .iter()
            .map(|r| {
                labels
                    .get(&r.sample_id)
                    .map(|bp| bp.get(t))
                    .ok_or_else(|| Error::parse("fusion csv", format!("sample {} is not in the dataset", r.sample_id)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let total: Vec<f64> = rows.iter().map(|r| r.total).collect();
        for method in SCATTER_METHODS {
            let pred: Vec<f64> = rows.iter().map(|r| method_column(r, method)).collect();
            let title = format!("{} {method}: prediction vs reference (mmHg)", t.name().to_uppercase());
            write_text(
                &out.join(format!("scatter_{}_{method}.svg", t.name())),
                &scatter_svg(&truth, &pred, &total, &title),
            )?;
        }
        let curve = parse_curve_csv(&read_text(&out.join(format!("curve_{}.csv", t.name())))?)?;
        let raw: Vec<(f64, f64)> = curve.iter().map(|c| (c.x, c.suc10)).collect();
        let smooth = moving_average(&curve.iter().map(|c| c.suc10).collect::<Vec<_>>(), CURVE_SMOOTHING);
        let series = vec![
            ("raw".to_string(), raw.clone()),
            ("smoothed".to_string(), raw.iter().zip(smooth).map(|(p, s)| (p.0, s)).collect()),
        ];
        write_text(
            &out.join(format!("curve_{}.svg", t.name())),
            &curve_svg(
                &series,
                &format!("{} Suc10 of the least uncertain predictions", t.name().to_uppercase()),
                "fraction kept",
                "Suc10 (%)",
            ),
        )?;
    }
    Ok(())
}

/// Text summary of the pooled metrics and subgroup tables.
pub fn report(ctx: &Context) -> Result<String> {
    let out = ctx.eval_dir();
    let metrics = parse_metrics_csv(&read_text(&out.join("metrics.csv"))?)?;
    let mut s = String::new();
    writeln!(s, "{:<6} {:<15} {:>7} {:>6} {:>6} {:>6} {:>4}", "target", "method", "mae", "corr", "suc10", "mase", "bhs").unwrap();
    for r in metrics.iter().filter(|r| r.fold == "all") {
        writeln!(
            s,
            "{:<6} {:<15} {:>7.2} {:>6.2} {:>6.1} {:>6.1} {:>4}",
            r.target, r.method, r.mae, r.corr, r.suc10, r.mase, r.bhs
        )
        .unwrap();
    }
    for t in Target::ALL {
        let rows = parse_subgroup_csv(&read_text(&out.join(format!("subgroups_{}.csv", t.name())))?)?;
        writeln!(s, "\n{} subgroups (uda-fuse)", t.name()).unwrap();
        writeln!(s, "{:<8} {:>7} {:>12}", "group", "mae", "total unc.").unwrap();
        for r in rows {
            writeln!(s, "{:<8} {:>7.2} {:>12.4}", r.group, r.mae, r.mean_total_uncertainty).unwrap();
        }
    }
    Ok(s)
}
