use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use restrictml_core::dataset::{
    correlation_matrix, load_dataset, persist_dataset, redundant_pairs, stratified_sample, LabeledDataset, SplitSpec,
};
use restrictml_core::enzymedb::{load_enzyme_table, EnzymeDb};
use restrictml_core::evalreport::{
    confusion, histograms_for, rates, write_confusion_csv, write_position_hist_csv, write_rates_csv,
};
use restrictml_core::features::{column_names, featurize_entries, ComplexityConfig, R2Mode};
use restrictml_core::seqcore::{read_fasta, DnaSequence, FastaRecord};
use restrictml_core::sitescan::build_scanner;
use restrictml_core::synthsim::{
    generate_labeled_entries, read_entries, synthesize, write_entries, ReferenceContext, TraceJson,
};
use restrictml_core::Label;
use restrictml_learn::cnn::{train, Network, NetworkSpec, Optimizer, TrainConfig};
use restrictml_learn::forest::{forest_train, BagMode, ForestParams};
use restrictml_learn::svm::{kkt_audit, svm_fit_pipeline, InputTransform, KernelKind, KernelSpec, SmoParams};
use restrictml_learn::{accuracy, to_matrix};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::modelfile::{CnnModel, ModelFile};
use crate::{
    BagArg, Classify, Cli, CliError, Command, CorrArgs, EvaluateArgs, FeaturizeArgs, IngestArgs, KernelArg,
    OptimizerArg, R2ModeArg, ReportArgs, SimulateArgs, SplitArgs, TrainCnnArgs, TrainForestArgs, TrainSvmArgs,
};

type Outcome = Result<(), CliError>;

struct Ctx<'a> {
    seed: u64,
    out: Option<&'a Path>,
    quiet: bool,
}

impl Ctx<'_> {
    fn out(&self, command: &str) -> Result<&Path, CliError> {
        self.out.ok_or_else(|| CliError::Usage(format!("{command} needs --out")))
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }
}

pub(crate) fn run(cli: &Cli) -> Outcome {
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.as_deref(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Featurize(a) => featurize(&ctx, a),
        Command::Corr(a) => corr(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::TrainSvm(a) => train_svm(&ctx, a),
        Command::TrainForest(a) => train_forest(&ctx, a),
        Command::TrainCnn(a) => train_cnn(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn enzymes(path: Option<&Path>) -> Result<EnzymeDb, CliError> {
    match path {
        Some(p) => load_enzyme_table(p).with_context(|| format!("enzyme table {}", p.display())).data(),
        None => Ok(EnzymeDb::bundled()),
    }
}

fn fasta(path: &Path) -> Result<Vec<FastaRecord>, CliError> {
    read_fasta(path).with_context(|| format!("FASTA {}", path.display())).data()
}

fn dataset(path: &Path) -> Result<LabeledDataset, CliError> {
    load_dataset(path).with_context(|| format!("dataset {}", path.display())).data()
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .internal()
}

fn finish(manifest: &RunManifest, artifact: &Path) -> Outcome {
    manifest
        .write_beside(artifact)
        .with_context(|| format!("manifest for {}", artifact.display()))
        .internal()?;
    Ok(())
}

fn with_inputs(mut m: RunManifest, inputs: &[Option<&Path>]) -> Result<RunManifest, CliError> {
    for p in inputs.iter().flatten() {
        m.input(p).with_context(|| format!("hashing {}", p.display())).data()?;
    }
    Ok(m)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Outcome {
    let db = enzymes(a.enzymes.as_deref())?;
    let mut summary = json!({
        "enzymes": db.len(),
        "palindromic": db.enzymes().iter().filter(|e| e.is_palindromic()).count(),
    });
    ctx.say(format!("enzymes: {} ({} palindromic)", db.len(), summary["palindromic"]));
    for (key, path) in [("genes", &a.genes), ("reference", &a.reference)] {
        let Some(path) = path else { continue };
        let recs = fasta(path)?;
        let lens: Vec<usize> = recs.iter().map(|r| r.sequence.len()).collect();
        ctx.say(format!("{key}: {} records, {} bp", recs.len(), lens.iter().sum::<usize>()));
        summary[key] = json!(recs
            .iter()
            .map(|r| json!({"id": r.id, "length": r.sequence.len()}))
            .collect::<Vec<_>>());
    }
    if let Some(out) = ctx.out {
        let mut m = with_inputs(
            RunManifest::new("ingest", a, ctx.seed),
            &[a.genes.as_deref(), a.reference.as_deref(), a.enzymes.as_deref()],
        )?;
        fs::write(out, serde_json::to_string_pretty(&summary).expect("json") + "\n")
            .with_context(|| format!("writing {}", out.display()))
            .internal()?;
        m.summary = summary;
        finish(&m, out)?;
    }
    Ok(())
}

fn single_reference(path: &Path) -> Result<FastaRecord, CliError> {
    let mut recs = fasta(path)?;
    if recs.len() != 1 {
        return Err(CliError::Data(anyhow!(
            "reference {} must hold exactly one record, found {}",
            path.display(),
            recs.len()
        )));
    }
    Ok(recs.remove(0))
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Outcome {
    let out = ctx.out("simulate")?;
    if a.windows.is_empty() || a.windows.contains(&0) {
        return Err(CliError::Usage("--windows needs positive lengths".into()));
    }
    if a.traces.is_some() && a.reference.is_none() {
        return Err(CliError::Usage("--traces needs --reference".into()));
    }
    let db = enzymes(a.enzymes.as_deref())?;
    let scanner = build_scanner(&db);
    let genes = fasta(&a.genes)?;
    let reference = a.reference.as_deref().map(single_reference).transpose()?;
    let context = match &reference {
        Some(r) => ReferenceContext::Shared {
            id: r.id.clone(),
            sequence: Arc::new(r.sequence.clone()),
        },
        None => ReferenceContext::SourceGene,
    };

    let entries = generate_labeled_entries(&genes, &context, &scanner, &db, &a.windows);
    let mut w = create(out)?;
    write_entries(&mut w, &entries).context("writing entries").internal()?;
    w.flush().context("writing entries").internal()?;

    let applicable = entries.iter().filter(|e| e.label.is_applicable()).count();
    ctx.say(format!(
        "{} entries ({} applicable, {} inapplicable)",
        entries.len(),
        applicable,
        entries.len() - applicable
    ));

    let mut m = with_inputs(
        RunManifest::new("simulate", a, ctx.seed),
        &[Some(&a.genes), a.reference.as_deref(), a.enzymes.as_deref()],
    )?;
    m.notes.push(format!(
        "stride-1 windows of lengths {:?} over each gene in id order; repeated subsequences keep their first occurrence",
        a.windows
    ));
    m.notes.push(match &reference {
        Some(r) => format!("reference context: shared record {}", r.id),
        None => "reference context: each entry's source gene".into(),
    });
    m.summary = json!({"entries": entries.len(), "applicable": applicable, "inapplicable": entries.len() - applicable});
    finish(&m, out)?;

    if let (Some(path), Some(r)) = (&a.traces, &reference) {
        let traces: Vec<TraceJson> = genes
            .iter()
            .map(|g| {
                let t = synthesize(&g.sequence, &r.sequence, &scanner, &db, a.min_fragment);
                TraceJson::from_trace(&g.id, &t, &db)
            })
            .collect();
        fs::write(path, serde_json::to_string_pretty(&traces).expect("json") + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .internal()?;
        finish(&m, path)?;
    }
    Ok(())
}

fn featurize(ctx: &Ctx, a: &FeaturizeArgs) -> Outcome {
    let out = ctx.out("featurize")?;
    let mut refs: HashMap<String, Arc<DnaSequence>> = HashMap::new();
    for path in [&a.genes, &a.reference].into_iter().flatten() {
        for r in fasta(path)? {
            refs.insert(r.id, Arc::new(r.sequence));
        }
    }
    let entries = read_entries(&a.entries, &refs)
        .with_context(|| format!("entries {}", a.entries.display()))
        .data()?;
    let mode = match a.r2_mode {
        R2ModeArg::Mean => R2Mode::MeanOverWindows,
        R2ModeArg::Literal => R2Mode::Literal,
    };
    let cfg = ComplexityConfig::new(a.b, a.p).data()?.with_mode(mode);
    let vectors = featurize_entries(&entries, &cfg, a.width).data()?;
    let data = LabeledDataset::new(a.width, vectors).data()?;
    persist_dataset(&data, out)
        .with_context(|| format!("writing {}", out.display()))
        .internal()?;

    let (t, f) = data.class_counts();
    ctx.say(format!("{} rows ({t} applicable, {f} inapplicable)", data.len()));
    let mut m = with_inputs(
        RunManifest::new("featurize", a, ctx.seed),
        &[Some(&a.entries), a.genes.as_deref(), a.reference.as_deref()],
    )?;
    m.summary = json!({"rows": data.len(), "applicable": t, "inapplicable": f, "width": a.width});
    finish(&m, out)
}

fn corr(ctx: &Ctx, a: &CorrArgs) -> Outcome {
    let out = ctx.out("corr")?;
    let data = dataset(&a.data)?;
    let matrix = correlation_matrix(&data).data()?;
    let names = column_names(data.width());

    let mut w = create(out)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "feature,{}", names.join(","))?;
        for (name, row) in names.iter().zip(&matrix) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        w.flush()
    };
    write(&mut w).context("writing correlation matrix").internal()?;

    let pairs = redundant_pairs(&matrix, a.threshold);
    let pairs_path = sibling(out, ".pairs.csv");
    let mut pw = create(&pairs_path)?;
    let mut listed = Vec::new();
    let write_pairs = |pw: &mut BufWriter<File>, listed: &mut Vec<serde_json::Value>| -> std::io::Result<()> {
        writeln!(pw, "feature_a,feature_b,r")?;
        for &(i, j) in &pairs {
            writeln!(pw, "{},{},{:.6}", names[i], names[j], matrix[i][j])?;
            listed.push(json!([names[i], names[j], matrix[i][j]]));
        }
        pw.flush()
    };
    write_pairs(&mut pw, &mut listed).context("writing pairs").internal()?;

    ctx.say(format!("{} pairs with |r| > {}", pairs.len(), a.threshold));
    for p in &listed {
        ctx.say(format!(
            "  {} ~ {}  r={:.3}",
            p[0].as_str().unwrap_or_default(),
            p[1].as_str().unwrap_or_default(),
            p[2].as_f64().unwrap_or_default()
        ));
    }
    let mut m = with_inputs(RunManifest::new("corr", a, ctx.seed), &[Some(&a.data)])?;
    m.summary = json!({"redundant_pairs": listed});
    finish(&m, out)?;
    finish(&m, &pairs_path)
}

fn split(ctx: &Ctx, a: &SplitArgs) -> Outcome {
    let out = ctx.out("split")?;
    let pool = dataset(&a.data)?;
    let spec = SplitSpec {
        train_size: a.train_size,
        train_true_ratio: a.train_ratio,
        test_size: a.test_size,
        test_true_ratio: a.test_ratio,
        seed: ctx.seed,
    };
    let (train_set, test_set) = stratified_sample(&pool, &spec).data()?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .internal()?;
    let m = with_inputs(RunManifest::new("split", a, ctx.seed), &[Some(&a.data)])?;
    for (name, set) in [("train.csv", &train_set), ("test.csv", &test_set)] {
        let path = out.join(name);
        persist_dataset(set, &path)
            .with_context(|| format!("writing {}", path.display()))
            .internal()?;
        let (t, f) = set.class_counts();
        ctx.say(format!("{name}: {} rows ({t} applicable, {f} inapplicable)", set.len()));
        let mut mm = m.clone();
        mm.summary = json!({"rows": set.len(), "applicable": t, "inapplicable": f});
        finish(&mm, &path)?;
    }
    Ok(())
}

fn labels_or_fail(data: &LabeledDataset) -> Result<Vec<Label>, CliError> {
    if data.is_empty() {
        return Err(CliError::Data(anyhow!("dataset has no rows")));
    }
    Ok(data.labels())
}

fn train_svm(ctx: &Ctx, a: &TrainSvmArgs) -> Outcome {
    let out = ctx.out("train-svm")?;
    if a.scatter.is_some() && a.pcs == 0 {
        return Err(CliError::Usage("--scatter needs --pcs >= 1".into()));
    }
    let data = dataset(&a.data)?;
    let labels = labels_or_fail(&data)?;
    let x = to_matrix(&data.rows());
    let kind = match a.kernel {
        KernelArg::Linear => KernelKind::Linear,
        KernelArg::Poly => KernelKind::Polynomial,
        KernelArg::Rbf => KernelKind::Rbf,
        KernelArg::Sigmoid => KernelKind::Sigmoid,
    };
    let dim = if a.pcs == 0 { data.dim() } else { a.pcs };
    let gamma = a.gamma.unwrap_or(1.0 / dim as f64);
    let kernel = KernelSpec::new(kind, a.degree, gamma, a.coef0).data()?;
    let params = SmoParams {
        kernel,
        c: a.c,
        tolerance: a.tolerance,
        max_passes: a.max_passes,
        seed: ctx.seed,
    };
    let (model, report) = svm_fit_pipeline(x.view(), &labels, a.pcs, &params).data()?;
    let z = model.transform.apply(x.view()).internal()?;
    let audit = kkt_audit(&model, z.view(), &labels, &report.alphas, a.tolerance);
    let train_acc = accuracy(&model.predict(x.view()).internal()?, &labels);

    ModelFile::Svm(model.clone()).save(out).internal()?;
    ctx.say(format!(
        "svm: {} support vectors, {} iterations, converged={}, kkt violations={}, train accuracy {:.3}",
        model.support_vectors.len(),
        report.iterations,
        report.converged,
        audit.violations,
        train_acc
    ));
    let mut m = with_inputs(RunManifest::new("train-svm", a, ctx.seed), &[Some(&a.data)])?;
    let explained = match &model.transform {
        InputTransform::Pca(p) => json!(p.explained_ratio()),
        _ => serde_json::Value::Null,
    };
    m.summary = json!({
        "support_vectors": model.support_vectors.len(),
        "iterations": report.iterations,
        "converged": report.converged,
        "kkt_violations": audit.violations,
        "gamma": gamma,
        "train_accuracy": train_acc,
        "explained_variance_ratio": explained,
    });
    if let Some(path) = &a.scatter {
        let InputTransform::Pca(pca) = &model.transform else {
            unreachable!("scatter requires PCA input");
        };
        let mut w = create(path)?;
        let header: Vec<String> = (1..=pca.k()).map(|i| format!("pc{i}")).collect();
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "{},label", header.join(","))?;
            for (row, l) in z.rows().into_iter().zip(&labels) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{}", cells.join(","), l.as_u8())?;
            }
            w.flush()
        };
        write().context("writing scatter").internal()?;
        finish(&m, path)?;
    }

    finish(&m, out)
}

fn train_forest(ctx: &Ctx, a: &TrainForestArgs) -> Outcome {
    let out = ctx.out("train-forest")?;
    let data = dataset(&a.data)?;
    let labels = labels_or_fail(&data)?;
    let x = to_matrix(&data.rows());
    let params = |n_trees| ForestParams {
        n_trees,
        features_per_node: a.features_per_node,
        max_depth: a.max_depth,
        bag_mode: match a.bag {
            BagArg::TwoThirds => BagMode::TwoThirds,
            BagArg::Classical => BagMode::Classical,
        },
        seed: ctx.seed,
    };
    let model = forest_train(x.view(), &labels, &params(a.trees)).data()?;
    ModelFile::Forest(model.clone()).save(out).internal()?;
    ctx.say(format!(
        "forest: {} trees, {} features per node, OOB error {:.3}",
        model.n_trees,
        model.features_per_node,
        model.oob.rate()
    ));
    let mut m = with_inputs(RunManifest::new("train-forest", a, ctx.seed), &[Some(&a.data)])?;
    m.summary = json!({
        "oob_misclassified": model.oob.misclassified,
        "oob_evaluated": model.oob.evaluated,
        "oob_error": model.oob.rate(),
        "features_per_node": model.features_per_node,
    });
    finish(&m, out)?;

    if !a.sweep.is_empty() {
        let path = sibling(out, ".sweep.csv");
        let mut rows = vec!["trees,oob_error".to_string()];
        for &n in &a.sweep {
            let f = forest_train(x.view(), &labels, &params(n)).data()?;
            ctx.say(format!("  {n} trees: OOB error {:.4}", f.oob.rate()));
            rows.push(format!("{n},{}", f.oob.rate()));
        }
        fs::write(&path, rows.join("\n") + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .internal()?;
        finish(&m, &path)?;
    }
    Ok(())
}

fn train_cnn(ctx: &Ctx, a: &TrainCnnArgs) -> Outcome {
    let out = ctx.out("train-cnn")?;
    let data = dataset(&a.data)?;
    let labels = labels_or_fail(&data)?;
    let spec = NetworkSpec::standard(data.width());
    let mut net = Network::build(spec, ctx.seed).data()?;
    let cfg = TrainConfig {
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::adam(),
            OptimizerArg::Sgd => Optimizer::Sgd { momentum: a.momentum },
        },
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        patience: (a.patience > 0).then_some(a.patience),
        validation_fraction: a.validation,
        seed: ctx.seed,
    };
    let log = train(&mut net, &data.seq_rows(), &labels, &cfg).data()?;

    let log_path = sibling(out, ".epochs.csv");
    let mut lines = vec!["epoch,loss,train_acc,val_acc".to_string()];
    for e in &log {
        let val = e.val_acc.map(|v| v.to_string()).unwrap_or_default();
        lines.push(format!("{},{},{},{}", e.epoch, e.loss, e.train_acc, val));
    }
    fs::write(&log_path, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", log_path.display()))
        .internal()?;

    let model = CnnModel {
        shape_trace: spec.shape_trace(),
        network: net,
    };
    ModelFile::Cnn(model).save(out).internal()?;
    if let Some(last) = log.last() {
        ctx.say(format!(
            "cnn: {} epochs, last loss {:.4}, train accuracy {:.3}",
            log.len(),
            last.loss,
            last.train_acc
        ));
    }
    let mut m = with_inputs(RunManifest::new("train-cnn", a, ctx.seed), &[Some(&a.data)])?;
    m.notes.push("input is the SEQ columns only".into());
    m.summary = json!({"epochs_run": log.len(), "shape_trace": spec.shape_trace()});
    finish(&m, out)?;
    finish(&m, &log_path)
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Outcome {
    let out = ctx.out("evaluate")?;
    let model = ModelFile::load(&a.model).data()?;
    let data = dataset(&a.data)?;
    let truth = labels_or_fail(&data)?;
    let predicted = model.predict(&data).data()?;
    let cm = confusion(&predicted, &truth).data()?;
    let r = rates(&cm).data()?;

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .internal()?;
    let m = with_inputs(RunManifest::new("evaluate", a, ctx.seed), &[Some(&a.model), Some(&a.data)])?;

    let path = out.join("confusion.csv");
    write_confusion_csv(create(&path)?, &cm).internal()?;
    finish(&m, &path)?;
    let path = out.join("rates.csv");
    write_rates_csv(create(&path)?, &r).internal()?;
    finish(&m, &path)?;
    let path = out.join("predictions.csv");
    let mut w = create(&path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "row,truth,predicted")?;
        for (i, (t, p)) in truth.iter().zip(&predicted).enumerate() {
            writeln!(w, "{i},{},{}", t.as_u8(), p.as_u8())?;
        }
        w.flush()
    };
    write().context("writing predictions").internal()?;
    finish(&m, &path)?;

    ctx.say(format!(
        "{}: tp={} fp={} tn={} fn={}  {r}",
        model.kind(),
        cm.tp,
        cm.fp,
        cm.tn,
        cm.fn_
    ));
    Ok(())
}

fn read_predictions(path: &Path, rows: usize) -> Result<Vec<Label>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("predictions {}", path.display()))
        .data()?;
    let headers = rdr.headers().data()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "predicted")
        .ok_or_else(|| CliError::Data(anyhow!("{} has no `predicted` column", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.data()?;
        let label = rec
            .get(col)
            .and_then(|v| v.parse::<u8>().ok())
            .and_then(Label::from_u8)
            .ok_or_else(|| CliError::Data(anyhow!("{} row {}: bad prediction", path.display(), i + 2)))?;
        out.push(label);
    }
    if out.len() != rows {
        return Err(CliError::Data(anyhow!("{} predictions for {rows} rows", out.len())));
    }
    Ok(out)
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Outcome {
    let out = ctx.out("report")?;
    let data = dataset(&a.data)?;
    let truth = labels_or_fail(&data)?;
    let predicted = match (&a.predictions, &a.model) {
        (Some(p), _) => read_predictions(p, data.len())?,
        (None, Some(m)) => ModelFile::load(m).data()?.predict(&data).data()?,
        (None, None) => return Err(CliError::Usage("report needs --predictions or --model".into())),
    };
    let seqs: Vec<DnaSequence> = data.vectors().iter().map(|v| v.decoded_subsequence()).collect();
    let refs: Vec<&DnaSequence> = seqs.iter().collect();
    let hist = histograms_for(&refs, &truth, &predicted, data.width()).data()?;

    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .internal()?;
    let path = out.join("position_hist.csv");
    write_position_hist_csv(create(&path)?, &hist).internal()?;
    let m = with_inputs(
        RunManifest::new("report", a, ctx.seed),
        &[Some(&a.data), a.predictions.as_deref(), a.model.as_deref()],
    )?;
    finish(&m, &path)?;
    ctx.say(format!("position histograms for {} positions written", hist.len()));
    Ok(())
}
