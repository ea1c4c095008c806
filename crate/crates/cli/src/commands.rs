use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mn_autodiff::{check_primitive, GradCheckReport};
use mn_core::contrastive::{model_gradcheck, Trainer};
use mn_core::encoder::{embed as encode_all, EncoderConfig, EncoderParams};
use mn_core::eval::{evaluate_classification, evaluate_clustering, make_split, LogisticConfig, Metrics};
use mn_core::fixtures::toy_graph;
use mn_core::graph::{HeteroGraph, MetaNodeSample};
use mn_core::io::{
    generate_synthetic, load_checkpoint, load_embeddings, load_graph, read_labels, save_checkpoint, save_embeddings,
    save_graph, Checkpoint, Dataset, SyntheticSpec, PRESETS,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{ClassifyArgs, ClusterArgs, EmbedArgs, GenerateArgs, GradcheckArgs, SparsifyArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Artifact(format!("{}: {e}", path.display()))
}

fn type_index(g: &HeteroGraph, name: &str) -> Result<usize, CliError> {
    g.node_type_index(name).ok_or_else(|| {
        let known: Vec<&str> = g.node_types().iter().map(|t| t.name.as_str()).collect();
        CliError::Usage(format!("unknown node type `{name}` (graph has {})", known.join(", ")))
    })
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let mut spec = SyntheticSpec::preset(&a.preset, a.seed).ok_or_else(|| {
        CliError::Usage(format!("unknown preset `{}` (expected one of {})", a.preset, PRESETS.join(", ")))
    })?;
    if let Some(k) = a.k {
        spec.num_classes = k;
    }
    if let Some(n) = a.target_count {
        spec.target_count = n;
    }
    if let Some(d) = a.feature_dim {
        spec.feature_dim = d;
    }
    if let Some(s) = a.feature_noise {
        spec.feature_noise = s;
    }
    if let Some(l) = a.edges_per_node {
        spec.edges_per_node = l;
    }
    if let Some(p) = a.affinity {
        for aux in &mut spec.aux_types {
            aux.affinity = p;
        }
    }
    let data = generate_synthetic(&spec)?;
    save_graph(&data, &a.out, a.binary_features)?;
    let g = &data.graph;
    for t in g.node_types() {
        println!("node type {}: {} nodes, {} features", t.name, t.count, t.feature_dim);
    }
    for (et, e) in g.edge_types().iter().enumerate() {
        println!("edge type {}: {} edges", e.name, g.edge_count(et));
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = &a.$flag { c.$field = v.clone(); })*
        };
    }
    set!(epochs => epochs, lr => lr, wd => weight_decay, patience => patience, dim => dim, layers => layers,
        com => com, pool => pool, r => r, use_meta_node => use_meta_node, batch_norm => batch_norm);
    if a.graph.is_some() {
        c.graph = a.graph.clone();
    }
    if a.out.is_some() {
        c.out = a.out.clone();
    }
    if a.seed.is_some() {
        c.seed = a.seed;
    }
    if a.target_type.is_some() {
        c.target_type = a.target_type.clone();
    }
    Ok(c)
}

#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    loss: f64,
    elapsed_ms: u128,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut run = resolve_run_config(a)?;
    let graph_dir = run.graph.clone().ok_or_else(|| CliError::Usage("--graph is required".into()))?;
    let out = run.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let seed = run.seed.ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let data = load_graph(&graph_dir)?;
    let g = &data.graph;
    let target = match &run.target_type {
        Some(name) => type_index(g, name)?,
        None => data.labels.as_ref().map_or(0, |l| l.node_type),
    };
    run.target_type = Some(g.node_types()[target].name.clone());
    let cfg = run.train_config(seed, target);
    let trainer = Trainer::new(g, cfg.clone())?;

    fs::create_dir_all(&out).map_err(write_err(&out))?;
    let config_path = out.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(&run).expect("config serializes") + "\n";
    fs::write(&config_path, json).map_err(write_err(&config_path))?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(write_err(&log_path))?);
    let mut log_failure = None;
    let report = trainer.run(|rec| {
        let line = LogLine { epoch: rec.epoch, loss: rec.loss, elapsed_ms: rec.elapsed_ms };
        let text = serde_json::to_string(&line).expect("log line serializes");
        if let Err(e) = writeln!(log, "{text}") {
            log_failure.get_or_insert(e);
        }
    });
    let flushed = log.flush();
    if let Some(e) = log_failure {
        return Err(write_err(&log_path)(e));
    }
    flushed.map_err(write_err(&log_path))?;
    let report = report?;

    let ckpt_path = out.join(CHECKPOINT_FILE);
    save_checkpoint(&Checkpoint::capture(&cfg, &report.final_params, report.best_epoch), &ckpt_path)?;
    let last = report.loss_history.last().copied().unwrap_or(f64::NAN);
    println!(
        "epochs {} final loss {last:.6} best loss {:.6} at epoch {}",
        report.loss_history.len(),
        report.best_loss,
        report.best_epoch
    );
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<(), CliError> {
    if !(a.r > 0.0 && a.r <= 100.0) {
        return Err(CliError::Usage(format!("--r must lie in (0, 100], got {}", a.r)));
    }
    let data = load_graph(&a.graph)?;
    let g = &data.graph;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let params: EncoderParams = ckpt.restore(g)?;
    let target = match &a.target_type {
        Some(name) => type_index(g, name)?,
        None => ckpt.config.target_type,
    };
    if target >= g.num_node_types() {
        return Err(CliError::Artifact(format!(
            "checkpoint targets node type {target}, graph has {}",
            g.num_node_types()
        )));
    }
    let sample = if a.r >= 100.0 {
        MetaNodeSample::full(g)
    } else {
        let seed = a.seed.ok_or_else(|| CliError::Usage("--seed is required when --r is below 100".into()))?;
        g.sample_meta_members(a.r, seed)?
    };
    let h = encode_all(g, &params, &ckpt.config.encoder, &sample)?;
    let m = &h[target];
    save_embeddings(m, &a.out)?;
    println!(
        "wrote {}x{} embeddings of type {} to {}",
        m.rows(),
        m.cols(),
        g.node_types()[target].name,
        a.out.display()
    );
    Ok(())
}

fn load_labelled(embeddings: &Path, labels: &Path) -> Result<(mn_autodiff::Matrix, Vec<usize>, usize), CliError> {
    let h = load_embeddings(embeddings)?;
    let l = read_labels(labels, 0, h.rows())?;
    Ok((h, l.classes, l.num_classes))
}

fn print_metrics(m: &Metrics) {
    println!("{}", m.key_values());
    println!("{}", Metrics::tsv_header());
    println!("{}", m.tsv_row());
}

pub fn classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let (h, labels, k) = load_labelled(&a.embeddings, &a.labels)?;
    let rest = labels.len().saturating_sub(a.n_per_class * k);
    let n_test = a.n_test.unwrap_or_else(|| rest.saturating_sub(a.n_val));
    let split = make_split(&labels, a.n_per_class, a.n_val, n_test, a.seed)?;
    print_metrics(&evaluate_classification(&h, &labels, k, &split, &LogisticConfig::default())?);
    Ok(())
}

pub fn cluster(a: &ClusterArgs) -> Result<(), CliError> {
    let (h, labels, k) = load_labelled(&a.embeddings, &a.labels)?;
    print_metrics(&evaluate_clustering(&h, &labels, a.k.unwrap_or(k), a.seed, a.restarts)?);
    Ok(())
}

pub fn sparsify(a: &SparsifyArgs) -> Result<(), CliError> {
    let data = load_graph(&a.graph)?;
    let graph = data.graph.sparsify(a.keep_fraction, a.seed)?;
    for (et, e) in graph.edge_types().iter().enumerate() {
        println!("edge type {}: kept {} of {}", e.name, graph.edge_count(et), data.graph.edge_count(et));
    }
    save_graph(&Dataset { graph, labels: data.labels }, &a.out, a.binary_features)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn report_gradcheck(what: &str, r: &GradCheckReport, tolerance: f64) -> Result<(), CliError> {
    let worst = r.worst.as_ref().map_or(String::from("none"), |(name, i)| format!("{name}[{i}]"));
    println!(
        "{what}: max relative error {:.3e} over {} entries, worst {worst} (analytic {:.6e}, numeric {:.6e})",
        r.max_rel_error, r.checked, r.analytic, r.numeric
    );
    if r.max_rel_error < tolerance {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "{what}: gradient check failed, {:.3e} exceeds {tolerance:.0e}",
            r.max_rel_error
        )))
    }
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    if let Some(op) = a.op {
        let r = check_primitive(op, a.seed, a.break_backward).map_err(|e| CliError::Numerical(e.to_string()))?;
        return report_gradcheck(op.name(), &r, a.tolerance);
    }
    let (g, what): (HeteroGraph, PathBuf) = match &a.graph {
        Some(dir) => (load_graph(dir)?.graph, dir.clone()),
        None => (toy_graph(a.seed), PathBuf::from("toy graph")),
    };
    let cfg = EncoderConfig {
        dim: a.dim,
        num_layers: a.layers,
        com: a.com,
        pool: a.pool,
        use_meta_node: a.use_meta_node,
        r: a.r,
        ..Default::default()
    };
    let params = EncoderParams::init(&g, &cfg, a.seed)?;
    let r = model_gradcheck(&g, &params, &cfg, a.seed, a.break_backward)?;
    report_gradcheck(&what.display().to_string(), &r, a.tolerance)
}
