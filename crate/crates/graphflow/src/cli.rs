//! Command line front end.
//!
//! Exit codes: 0 on success, 1 for usage problems (bad flags, bad config),
//! 2 for runtime failures. All file outputs are pure functions of the
//! inputs and flags; nothing here reads clocks or machine identity.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::branches::{pretrain_shape_codec, pretrain_texture_codec, ShapeCodec, TextureCodec};
use crate::eval::{check_constraint, distribution_metrics, EvalMode, EvalReport};
use crate::flow::{Branch, FlowModel, Trainer};
use crate::graph::{generate_dataset, read_graph, Family, Predicate, SceneGraph, VoxelGrid};
use crate::io::{
    check_fingerprint, fingerprint, load_checkpoint, parse_config, read_dataset, read_scene,
    save_checkpoint, write_dataset, write_scene, write_svg, Checkpoint, RunConfig,
};
use crate::pipeline::{
    grid_points, layout_items, run_eval_mode, same_as_consistency, sample_scene, shape_items,
    texture_items, SceneModels,
};
use crate::tensor::AdamW;
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "graphflow",
    version,
    about = "Scene-graph conditioned rectified flow over layout, shape and texture"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene dataset and print its edge statistics.
    GenData {
        /// Number of scenes.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain the frozen shape or texture codec.
    PretrainCodec {
        #[arg(long, value_parser = ["shape", "texture"])]
        kind: String,
        /// Dataset file; required for the shape codec.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one flow branch, checkpointing every 500 steps and at the end.
    Train {
        #[arg(long, value_parser = ["layout", "shape", "texture"])]
        branch: String,
        /// Training dataset.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path, overwritten at every save.
        #[arg(long)]
        out: PathBuf,
        /// Pretrained codec checkpoint (shape and texture branches).
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Continue from an earlier checkpoint, bit-exactly.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Pause this invocation at the given step; pick up with --resume.
        #[arg(long = "stop-after")]
        stop_after: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accept checkpoints written under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Sample one scene for a graph and print a per-edge constraint report.
    Sample {
        /// Scene graph JSON.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long = "layout-ckpt")]
        layout_ckpt: PathBuf,
        #[arg(long = "shape-ckpt")]
        shape_ckpt: Option<PathBuf>,
        #[arg(long = "texture-ckpt")]
        texture_ckpt: Option<PathBuf>,
        /// Euler steps; overrides the checkpoint config.
        #[arg(long)]
        k: Option<usize>,
        /// Guidance weight; overrides the checkpoint config.
        #[arg(long = "cfg")]
        cfg: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output scene file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score generated scenes against held-out graphs, one TSV per run.
    Eval {
        /// Repeatable; defaults to all three modes.
        #[arg(long, value_parser = ["generation-only", "relationship-change", "node-addition"])]
        mode: Vec<String>,
        /// Held-out dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "layout-ckpt")]
        layout_ckpt: Option<PathBuf>,
        #[arg(long = "shape-ckpt")]
        shape_ckpt: Option<PathBuf>,
        #[arg(long = "texture-ckpt")]
        texture_ckpt: Option<PathBuf>,
        /// Score the ground truth itself; every rate must come out 1.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Run config for --oracle runs without checkpoints.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output TSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Render an assembled scene to SVG, top down.
    Render {
        /// Scene file produced by `sample`.
        #[arg(long)]
        scene: PathBuf,
        /// Output SVG.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if crate::is_usage_error(&e) {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { count, seed, out, config } => gen_data(count, seed, &out, config),
        Cmd::PretrainCodec { kind, data, out, config } => {
            pretrain_codec(&kind, data, &out, config)
        }
        Cmd::Train { branch, data, out, codec, resume, stop_after, config, force } => {
            train(&branch, &data, &out, codec, resume, stop_after, config, force)
        }
        Cmd::Sample { graph, layout_ckpt, shape_ckpt, texture_ckpt, k, cfg, seed, out, force } => {
            sample_cmd(&graph, &layout_ckpt, shape_ckpt, texture_ckpt, k, cfg, seed, &out, force)
        }
        Cmd::Eval {
            mode,
            data,
            layout_ckpt,
            shape_ckpt,
            texture_ckpt,
            oracle,
            seed,
            config,
            out,
            force,
        } => eval_cmd(
            &mode,
            &data,
            layout_ckpt,
            shape_ckpt,
            texture_ckpt,
            oracle,
            seed,
            config,
            &out,
            force,
        ),
        Cmd::Render { scene, out } => {
            let (assembled, vocab) = read_scene(&scene)?;
            write_svg(&out, &assembled, &vocab)
        }
    }
}

fn load_run_config(path: Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => crate::io::load_config(&p),
        None => Ok(RunConfig::default()),
    }
}

/// The config a checkpoint was trained under.
fn embedded_config(ck: &Checkpoint, path: &Path) -> Result<RunConfig> {
    parse_config(&ck.config_text).map_err(|e| {
        Error::Checkpoint(format!("{}: embedded config is invalid: {e}", path.display()))
    })
}

fn expect_branch(ck: &Checkpoint, want: &str, path: &Path) -> Result<()> {
    if ck.branch != want {
        return Err(Error::Validation {
            rule: "checkpoint-branch".into(),
            detail: format!(
                "{} holds a \"{}\" checkpoint, expected \"{want}\"",
                path.display(),
                ck.branch
            ),
        });
    }
    Ok(())
}

fn gen_data(count: usize, seed: u64, out: &Path, config: Option<PathBuf>) -> Result<()> {
    let cfg = load_run_config(config)?;
    let samples = generate_dataset(&cfg.oracle, count, seed)?;
    write_dataset(out, &samples, cfg.oracle.embed_seed)?;

    let mut nodes = 0;
    let mut per_family = [0usize; 7];
    let families =
        [Family::SPATIAL.as_slice(), &[Family::Identity]].concat();
    for s in &samples {
        nodes += s.graph.len();
        for e in s.graph.edges() {
            if e.src < e.dst {
                let slot = families.iter().position(|&f| f == e.pred.family()).unwrap();
                per_family[slot] += 1;
            }
        }
    }
    println!("scenes\t{count}");
    println!("nodes\t{nodes}");
    for (family, n) in families.iter().zip(per_family) {
        println!("{}\t{n}", family.label());
    }
    Ok(())
}

fn pretrain_codec(
    kind: &str,
    data: Option<PathBuf>,
    out: &Path,
    config: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_run_config(config)?;
    let text = cfg.canonical_text();
    let (params, seed) = match kind {
        "shape" => {
            let data = data.ok_or_else(|| {
                Error::Config("--data is required when pretraining the shape codec".into())
            })?;
            let ds = read_dataset(&data)?;
            // Scenes repeat the same prototype shapes; the codec only needs
            // each distinct grid once.
            let mut seen = std::collections::HashSet::new();
            let mut grids: Vec<VoxelGrid> = Vec::new();
            for g in ds.samples.iter().flat_map(|s| &s.grids) {
                if seen.insert(g.clone()) {
                    grids.push(g.clone());
                }
            }
            let codec = pretrain_shape_codec(&cfg.shape_codec, &grids)?;
            (codec.params().clone(), cfg.shape_codec.seed)
        }
        _ => {
            let codec = pretrain_texture_codec(&cfg.texture_codec)?;
            (codec.params().clone(), cfg.texture_codec.seed)
        }
    };
    let ck = Checkpoint {
        branch: format!("{kind}-codec"),
        fingerprint: fingerprint(&text),
        config_text: text,
        seed,
        step: 0,
        params,
        opt: None,
    };
    save_checkpoint(out, &ck)?;
    println!("saved\t{}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    branch_name: &str,
    data: &Path,
    out: &Path,
    codec: Option<PathBuf>,
    resume: Option<PathBuf>,
    stop_after: Option<usize>,
    config: Option<PathBuf>,
    force: bool,
) -> Result<()> {
    let branch = Branch::from_name(branch_name)?;
    let cfg = load_run_config(config)?;
    let cfg_text = cfg.canonical_text();
    let fp = fingerprint(&cfg_text);
    let ds = read_dataset(data)?;
    let ncat = cfg.oracle.categories.len();

    let mut trainer = match resume {
        Some(rpath) => {
            if codec.is_some() {
                eprintln!("note: --codec is ignored on resume; the checkpoint embeds its codec");
            }
            let ck = load_checkpoint(&rpath)?;
            expect_branch(&ck, branch_name, &rpath)?;
            check_fingerprint(&ck, fp, force)?;
            let step = ck.step as usize;
            let opt_state = ck.opt.ok_or_else(|| {
                Error::Checkpoint(format!(
                    "{}: no optimizer state, cannot resume",
                    rpath.display()
                ))
            })?;
            let model = FlowModel::from_params(ck.params, branch, ncat, cfg.model.attention)?;
            let mut opt = AdamW::new(&model.params, cfg.train.weight_decay);
            opt.state = opt_state;
            Trainer::resume(model, cfg.train.clone(), opt, step)?
        }
        None => {
            let mut model = FlowModel::new(branch, ncat, cfg.model.attention, cfg.model.seed)?;
            if branch != Branch::Layout {
                let cpath = codec.ok_or_else(|| {
                    Error::Config(format!(
                        "the {branch_name} branch needs a pretrained codec; run \
                         `graphflow pretrain-codec --kind {branch_name}` first and pass \
                         the result with --codec"
                    ))
                })?;
                let cck = load_checkpoint(&cpath)?;
                expect_branch(&cck, &format!("{branch_name}-codec"), &cpath)?;
                check_fingerprint(&cck, fp, force)?;
                for (_, name, tensor) in cck.params.iter() {
                    model.params.add(name, tensor.clone())?;
                }
            }
            Trainer::new(model, cfg.train.clone())?
        }
    };

    // The codec rows carry no gradient, so the optimizer never touches them;
    // they ride along so one file holds everything sampling needs.
    let items = match branch {
        Branch::Layout => layout_items(&ds.samples)?,
        Branch::Shape => {
            let codec = ShapeCodec::from_params(trainer.model.params.clone())?;
            shape_items(&ds.samples, &codec)?
        }
        Branch::Texture => texture_items(&ds.samples)?,
    };

    let cap = stop_after.unwrap_or(cfg.train.steps).min(cfg.train.steps);
    let mut on_loss = |step: usize, loss: f64| println!("{step}\t{loss}");
    loop {
        // Snapshots land on multiples of 500 regardless of where a previous
        // session paused; saving is a pure read of the trainer.
        let until = (trainer.step - trainer.step % 500 + 500).min(cap);
        trainer.run_until(&items, until, &mut on_loss)?;
        let ck = Checkpoint {
            branch: branch_name.to_string(),
            fingerprint: fp,
            config_text: cfg_text.clone(),
            seed: cfg.train.seed,
            step: trainer.step as u64,
            params: trainer.model.params.clone(),
            opt: Some(trainer.opt.state.clone()),
        };
        save_checkpoint(out, &ck)?;
        trainer.last_checkpoint = Some(out.display().to_string());
        if trainer.step >= cap {
            break;
        }
    }
    Ok(())
}

struct LoadedBranches {
    cfg: RunConfig,
    fingerprint: u64,
    layout: FlowModel,
    shape: Option<(FlowModel, ShapeCodec)>,
    texture: Option<(FlowModel, TextureCodec)>,
}

impl LoadedBranches {
    fn models(&self) -> SceneModels<'_> {
        SceneModels {
            layout: &self.layout,
            shape: self.shape.as_ref().map(|(m, c)| (m, c)),
            texture: self.texture.as_ref().map(|(m, c)| (m, c)),
        }
    }
}

/// Load the layout checkpoint plus optional shape/texture ones, requiring
/// branch tags to match and all fingerprints to agree unless forced.
fn load_branches(
    layout_ckpt: &Path,
    shape_ckpt: Option<PathBuf>,
    texture_ckpt: Option<PathBuf>,
    force: bool,
) -> Result<LoadedBranches> {
    let lck = load_checkpoint(layout_ckpt)?;
    expect_branch(&lck, "layout", layout_ckpt)?;
    let cfg = embedded_config(&lck, layout_ckpt)?;
    let fp = lck.fingerprint;
    let ncat = cfg.oracle.categories.len();
    let attention = cfg.model.attention;
    let layout = FlowModel::from_params(lck.params, Branch::Layout, ncat, attention)?;

    let shape = match shape_ckpt {
        Some(p) => {
            let ck = load_checkpoint(&p)?;
            expect_branch(&ck, "shape", &p)?;
            check_fingerprint(&ck, fp, force)?;
            let model =
                FlowModel::from_params(ck.params.clone(), Branch::Shape, ncat, attention)?;
            let codec = ShapeCodec::from_params(ck.params)?;
            Some((model, codec))
        }
        None => None,
    };
    let texture = match texture_ckpt {
        Some(p) => {
            let ck = load_checkpoint(&p)?;
            expect_branch(&ck, "texture", &p)?;
            check_fingerprint(&ck, fp, force)?;
            let model =
                FlowModel::from_params(ck.params.clone(), Branch::Texture, ncat, attention)?;
            let codec = TextureCodec::from_params(ck.params)?;
            Some((model, codec))
        }
        None => None,
    };
    Ok(LoadedBranches { cfg, fingerprint: fp, layout, shape, texture })
}

#[allow(clippy::too_many_arguments)]
fn sample_cmd(
    graph_path: &Path,
    layout_ckpt: &Path,
    shape_ckpt: Option<PathBuf>,
    texture_ckpt: Option<PathBuf>,
    k: Option<usize>,
    guidance: Option<f64>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let loaded = load_branches(layout_ckpt, shape_ckpt, texture_ckpt, force)?;
    let cfg = &loaded.cfg;
    let graph = read_graph(
        graph_path,
        &cfg.oracle.categories,
        cfg.oracle.styles,
        cfg.oracle.embed_seed,
    )?;

    let mut scfg = cfg.sample.clone();
    if let Some(k) = k {
        scfg.steps = k;
    }
    if let Some(w) = guidance {
        scfg.guidance = w;
    }
    if let Some(s) = seed {
        scfg.seed = s;
    }

    let gen = sample_scene(&loaded.models(), &graph, &scfg)?;
    let scene = gen.assemble(&graph)?;
    write_scene(out, &scene, &cfg.oracle.categories)?;

    for e in graph.edges() {
        if e.src > e.dst {
            continue;
        }
        let verdict = if e.pred == Predicate::SameAs {
            if loaded.shape.is_some() {
                if gen.grids[e.src] == gen.grids[e.dst] {
                    "ok"
                } else {
                    "violated"
                }
            } else {
                "unchecked"
            }
        } else if check_constraint(e.pred, &gen.layouts[e.src], &gen.layouts[e.dst], &cfg.eval)? {
            "ok"
        } else {
            "violated"
        };
        println!("{} {} {}\t{verdict}", e.src, e.pred.name(), e.dst);
    }
    println!("degenerate-shapes\t{}", scene.degenerate_shapes);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    mode_names: &[String],
    data: &Path,
    layout_ckpt: Option<PathBuf>,
    shape_ckpt: Option<PathBuf>,
    texture_ckpt: Option<PathBuf>,
    oracle: bool,
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let ds = read_dataset(data)?;
    let modes: Vec<EvalMode> = if mode_names.is_empty() {
        EvalMode::ALL.to_vec()
    } else {
        mode_names
            .iter()
            .map(|s| EvalMode::from_name(s))
            .collect::<Result<_>>()?
    };

    let loaded = match (&layout_ckpt, oracle) {
        (Some(p), _) => Some(load_branches(p, shape_ckpt, texture_ckpt, force)?),
        (None, true) => None,
        (None, false) => {
            return Err(Error::Config(
                "--layout-ckpt is required unless --oracle is set".into(),
            ))
        }
    };
    let cfg = match &loaded {
        Some(l) => l.cfg.clone(),
        None => load_run_config(config)?,
    };

    // The oracle path still needs a layout model object to thread through;
    // it is never invoked.
    let placeholder;
    let models = match &loaded {
        Some(l) => l.models(),
        None => {
            placeholder =
                FlowModel::new(Branch::Layout, cfg.oracle.categories.len(), false, 0)?;
            SceneModels { layout: &placeholder, shape: None, texture: None }
        }
    };

    let eval_seed = seed.unwrap_or(cfg.sample.seed);
    let mut report = EvalReport::default();
    let mut shape_generated: Option<Vec<(SceneGraph, Vec<VoxelGrid>)>> = None;
    for &mode in &modes {
        let outcome = run_eval_mode(
            mode,
            &models,
            &ds.samples,
            &cfg.sample,
            &cfg.eval,
            &cfg.oracle,
            eval_seed,
            oracle,
        )?;
        if let Some((sat, total)) = outcome.changed {
            let rate = if total > 0 { format!("{:.4}", sat as f64 / total as f64) } else { "-".into() };
            report.push_aux("changed-edge:relationship-change", rate);
        }
        if models.shape.is_some() {
            report.push_aux(
                &format!("degenerate:{}", mode.name()),
                outcome.degenerate.to_string(),
            );
        }
        if mode == EvalMode::Generation && models.shape.is_some() && !oracle {
            shape_generated = Some(outcome.generated.clone());
        }
        report.modes.push(outcome.report);
    }

    if let Some(generated) = &shape_generated {
        let cases: Vec<(&SceneGraph, &[VoxelGrid])> =
            generated.iter().map(|(g, grids)| (g, grids.as_slice())).collect();
        match same_as_consistency(&cases, eval_seed) {
            Ok(rep) => {
                report.push_aux("same-as-chamfer", format!("{:.6}", rep.mean));
                report.push_aux("same-as-chamfer-control", format!("{:.6}", rep.control_mean));
            }
            Err(Error::Metric(msg)) => report.push_aux("same-as-chamfer", msg),
            Err(e) => return Err(e),
        }
        let gen_sets: Vec<Vec<[f64; 3]>> = generated
            .iter()
            .flat_map(|(_, grids)| grid_points(grids))
            .collect();
        let ref_sets: Vec<Vec<[f64; 3]>> =
            ds.samples.iter().flat_map(|s| grid_points(&s.grids)).collect();
        let m = distribution_metrics(&gen_sets, &ref_sets)?;
        report.push_aux("mmd", format!("{:.6}", m.mmd));
        report.push_aux("cov", format!("{:.4}", m.cov));
        report.push_aux("1-nna", format!("{:.4}", m.nna));
    }

    std::fs::write(out, report.to_tsv()).map_err(|e| Error::io(out, e))
}
