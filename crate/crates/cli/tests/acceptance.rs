//! End-to-end acceptance suite. Runs every criterion, prints one
//! PASS/FAIL line each, and exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use ndarray::Array2;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restrictml_core::dataset::{correlation_of_rows, load_dataset, redundant_pairs};
use restrictml_core::enzymedb::{digest, find_sites, EnzymeDb};
use restrictml_core::evalreport::{rates, ConfusionMatrix};
use restrictml_core::features::{column_names, complexity_r1, complexity_r2, ComplexityConfig};
use restrictml_core::seqcore::{read_fasta, DnaSequence};
use restrictml_core::sitescan::{build_scanner, SiteHit};
use restrictml_core::synthsim::{label_subsequence, Label};
use restrictml_learn::cnn::{Network, NetworkSpec};
use restrictml_learn::forest::{forest_train, grow_tree, tree_bag, BagMode, ForestParams, TreeParams};
use restrictml_learn::pca::pca_fit;
use restrictml_learn::svm::{kkt_audit, svm_fit_pipeline, svm_train, KernelKind, KernelSpec, SmoParams};
use restrictml_learn::{accuracy, to_matrix};

const GENES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/genes.fa");

fn dna(s: &str) -> DnaSequence {
    DnaSequence::from_bytes(s.as_bytes()).unwrap()
}

fn random_dna(rng: &mut impl Rng, len: usize) -> DnaSequence {
    let bytes: Vec<u8> = (0..len).map(|_| b"ACGT"[rng.random_range(0..4)]).collect();
    DnaSequence::from_bytes(&bytes).unwrap()
}

fn within(elapsed: Duration, limit: Duration) -> Result<()> {
    ensure!(elapsed < limit, "took {elapsed:.2?}, limit {limit:?}");
    Ok(())
}

fn complexity_formulas() -> Result<String> {
    let start = Instant::now();
    ensure!(complexity_r1(&dna("ATCG"))? == 1.0);
    ensure!(complexity_r1(&dna("AAAA"))? == 0.25);
    let cfg = ComplexityConfig::new(4, 4)?;
    let mut lo = f64::INFINITY;
    for code in 0..256u32 {
        let s: String = (0..4).map(|k| ['A', 'C', 'G', 'T'][(code >> (2 * k)) as usize & 3]).collect();
        let seq = dna(&s);
        let r1 = complexity_r1(&seq)?;
        ensure!((0.25..=1.0).contains(&r1), "{s}: r1={r1}");
        let r2 = complexity_r2(&seq, &cfg)?;
        ensure!((r1 - r2).abs() <= 1e-12, "{s}: r1={r1} r2={r2}");
        lo = lo.min(r1);
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("256 4-mers, min r1 {lo}, {:.0?}", start.elapsed()))
}

fn scanner_equivalence() -> Result<String> {
    let start = Instant::now();
    let db = EnzymeDb::bundled();
    let scanner = build_scanner(&db);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut hits = 0;
    for _ in 0..1000 {
        let seq = random_dna(&mut rng, 2000);
        let mut fast = scanner.scan_all(&seq);
        let mut naive: Vec<SiteHit> = db
            .enzymes()
            .iter()
            .enumerate()
            .flat_map(|(i, e)| find_sites(e, &seq).into_iter().map(move |position| SiteHit { enzyme_index: i, position }))
            .collect();
        fast.sort();
        naive.sort();
        ensure!(fast == naive, "hit sets differ");
        hits += fast.len();
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("{} enzymes, {hits} hits, {:.1?}", db.len(), start.elapsed()))
}

fn digest_reassembly() -> Result<String> {
    let db = EnzymeDb::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cut = 0;
    for _ in 0..500 {
        let e = &db.enzymes()[rng.random_range(0..db.len())];
        let len = rng.random_range(1..3000);
        let seq = random_dna(&mut rng, len);
        let frags = digest(e, &seq);
        let joined: Vec<u8> = frags.iter().flat_map(|f| f.sequence.as_bytes().iter().copied()).collect();
        ensure!(joined == seq.as_bytes(), "{} on {len} bp", e.name);
        cut += usize::from(frags.len() > 1);
    }
    Ok(format!("500 pairs, {cut} with cuts"))
}

fn labeling_oracle() -> Result<String> {
    let db = EnzymeDb::bundled();
    let scanner = build_scanner(&db);
    let genes = read_fasta(GENES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut applicable = 0;
    for _ in 0..100 {
        let g = &genes[rng.random_range(0..genes.len())].sequence;
        let w = [12, 16, 20, 24][rng.random_range(0..4)];
        let start = rng.random_range(0..=g.len() - w);
        let window = g.slice(start, start + w);
        // Every pair of cut positions from sites lying wholly in the window.
        let mut cuts = Vec::new();
        for e in db.enzymes() {
            for p in 0..=w.saturating_sub(e.site_len()) {
                if p + e.site_len() <= w && e.matches_at(window.as_bytes(), p) {
                    cuts.push(p + e.cut_top);
                }
            }
        }
        let brute = cuts.iter().any(|a| cuts.iter().any(|b| a < b));
        let label = label_subsequence(&window, &scanner, &db);
        ensure!(label.is_applicable() == brute, "{window}");
        applicable += usize::from(brute);
    }
    Ok(format!("100/100 agree ({applicable} applicable)"))
}

fn metric_identities() -> Result<String> {
    let cm = ConfusionMatrix {
        tp: 949,
        fn_: 51,
        tn: 774,
        fp: 226,
    };
    let r = rates(&cm)?;
    ensure!(r.sensitivity == Ratio::new(949, 1000) && r.fnr == Ratio::new(51, 1000));
    ensure!(r.specificity == Ratio::new(774, 1000) && r.fpr == Ratio::new(226, 1000));
    ensure!(r.sensitivity + r.fnr == Ratio::from_integer(1));
    ensure!(r.specificity + r.fpr == Ratio::from_integer(1));
    Ok(format!("{r}"))
}

fn pca_properties() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Array2::from_shape_fn((250, 8), |(_, j)| rng.random::<f64>() * (j + 1) as f64);
    let x = x.dot(&Array2::from_shape_fn((8, 8), |(i, j)| if i == j { 1.0 } else { 0.3 }));
    let model = pca_fit(x.view(), 8)?;
    for a in 0..8 {
        for b in 0..8 {
            let d: f64 = model.components[a].iter().zip(&model.components[b]).map(|(p, q)| p * q).sum();
            ensure!((d - f64::from(u8::from(a == b))).abs() < 1e-8, "components {a},{b}: {d}");
        }
    }
    let t = model.transform(x.view())?;
    let var = t.var_axis(ndarray::Axis(0), 1.0);
    for k in 0..8 {
        ensure!((var[k] - model.explained_variance[k]).abs() < 1e-8, "PC{k} variance");
        ensure!(k == 0 || var[k] <= var[k - 1] + 1e-12, "PC{k} out of order");
    }
    let t1: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
    let rank1 = Array2::from_shape_fn((40, 5), |(i, j)| t1[i] * (j as f64 - 2.5));
    let share = pca_fit(rank1.view(), 1)?.explained_ratio()[0];
    ensure!((share - 1.0).abs() < 1e-12, "rank-1 PC1 share {share}");
    Ok(format!("rank-1 PC1 share {share}"))
}

fn svm_properties() -> Result<String> {
    let audited = std::cell::Cell::new(0);
    let audit = |kind: KernelKind, x: &Array2<f64>, y: &[Label]| -> Result<Vec<Label>> {
        let params = SmoParams::new(KernelSpec::with_defaults(kind, x.ncols()), 7);
        let (model, report) = svm_train(x.view(), y, &params)?;
        let a = kkt_audit(&model, x.view(), y, &report.alphas, 1e-3);
        ensure!(a.passed(), "{kind}: {a:?}");
        audited.set(audited.get() + 1);
        Ok(model.predict(x.view())?)
    };
    let pair = to_matrix(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
    let pair_y = [Label::Inapplicable, Label::Applicable];
    for kind in [KernelKind::Linear, KernelKind::Polynomial, KernelKind::Rbf, KernelKind::Sigmoid] {
        if kind != KernelKind::Sigmoid {
            ensure!(accuracy(&audit(kind, &pair, &pair_y)?, &pair_y) == 1.0, "{kind} on 2 points");
        }
    }
    let xor = to_matrix(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
    let xor_y = [Label::Applicable, Label::Applicable, Label::Inapplicable, Label::Inapplicable];
    let rbf = accuracy(&audit(KernelKind::Rbf, &xor, &xor_y)?, &xor_y);
    let lin = accuracy(&audit(KernelKind::Linear, &xor, &xor_y)?, &xor_y);
    ensure!(rbf == 1.0 && lin <= 0.75, "XOR rbf {rbf}, linear {lin}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
    let y: Vec<Label> = rows.iter().map(|r| Label::from_bool(r[0] * r[1] + 0.2 * r[2] > 0.3)).collect();
    let x = to_matrix(&rows);
    for kind in [KernelKind::Linear, KernelKind::Polynomial, KernelKind::Rbf, KernelKind::Sigmoid] {
        audit(kind, &x, &y)?;
        let params = SmoParams::new(KernelSpec::with_defaults(kind, 2), 7);
        let (model, report) = svm_fit_pipeline(x.view(), &y, 2, &params)?;
        let z = model.transform.apply(x.view())?;
        let a = kkt_audit(&model, z.view(), &y, &report.alphas, 1e-3);
        ensure!(a.passed(), "{kind} on 2 PCs: {a:?}");
        audited.set(audited.get() + 1);
    }
    Ok(format!("{} models audited, XOR rbf {rbf} linear {lin}", audited.get()))
}

fn forest_rows(n: usize, seed: u64) -> (Array2<f64>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let r: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        y.push(Label::from_bool(r[0] + r[1] - r[2] + 0.3 * (rng.random::<f64>() - 0.5) > 0.5));
        rows.push(r);
    }
    (to_matrix(&rows), y)
}

fn forest_properties() -> Result<String> {
    let (x, y) = forest_rows(2000, 8);
    let params = ForestParams::new(8);
    let a = serde_json::to_vec(&forest_train(x.view(), &y, &params)?)?;
    let b = serde_json::to_vec(&forest_train(x.view(), &y, &params)?)?;
    ensure!(a == b, "two runs differ");

    // With every feature offered at each node the tree depends only on its bag.
    let mut single = ForestParams::new(9);
    single.n_trees = 1;
    single.features_per_node = Some(8);
    let forest = forest_train(x.view(), &y, &single)?;
    let rows = tree_bag(9, 0, x.nrows(), BagMode::TwoThirds);
    let tree_params = TreeParams {
        features_per_node: 8,
        max_depth: None,
    };
    let plain = grow_tree(x.view(), &y, rows, tree_params, &mut ChaCha8Rng::seed_from_u64(0));
    let (probe, _) = forest_rows(500, 10);
    let tree_says: Vec<Label> = probe.rows().into_iter().map(|r| plain.predict_row(r)).collect();
    ensure!(forest.predict(probe.view())? == tree_says, "one-tree forest differs from its tree");

    let (xt, yt) = forest_rows(2000, 11);
    let forest = forest_train(x.view(), &y, &params)?;
    let held_out = 1.0 - accuracy(&forest.predict(xt.view())?, &yt);
    let oob = forest.oob.rate();
    ensure!((oob - held_out).abs() <= 0.05, "OOB {oob:.3} vs held-out {held_out:.3}");
    Ok(format!("OOB {oob:.3}, held-out {held_out:.3}"))
}

fn cnn_properties() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let w = rng.random_range(3..16);
        let spec = NetworkSpec::toy(w, rng.random_range(1..4), rng.random_range(2..6));
        let net = Network::build(spec, trial)?;
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..w).map(|_| [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)]).collect())
            .collect();
        let labels = [Label::Applicable, Label::Inapplicable, Label::Applicable];
        let check = net.gradient_check(&rows, &labels, 1e-5)?;
        ensure!(check.max_error < 1e-4, "toy {trial} W={w}: {check:?}");
        worst = worst.max(check.max_error);
    }
    let spec = NetworkSpec::standard(24);
    ensure!(spec.shape_trace() == [8, 3, 2, 128, 128, 2], "shape trace {:?}", spec.shape_trace());
    let net = Network::build(spec, 1)?;
    let rows: Vec<Vec<f64>> = (0..64).map(|_| (0..24).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()).collect();
    for p in net.forward(&rows)? {
        ensure!((p[0] + p[1] - 1.0).abs() <= 1e-9, "softmax row sums to {}", p[0] + p[1]);
    }
    Ok(format!("worst gradient error {worst:.2e}, trace {:?}", spec.shape_trace()))
}

fn run_cli(args: &[&str]) -> Result<()> {
    let argv = std::iter::once("restrictml").chain(["--quiet"]).chain(args.iter().copied());
    let code = restrictml::dispatch(argv);
    ensure!(code == 0, "`{}` exited {code}", args.join(" "));
    Ok(())
}

/// (sensitivity, specificity) as exact fractions from an evaluate run.
fn read_rates(dir: &Path) -> Result<(Ratio<u64>, Ratio<u64>)> {
    let mut rdr = csv::Reader::from_path(dir.join("rates.csv"))?;
    let mut found = (None, None);
    for rec in rdr.records() {
        let rec = rec?;
        let r = Ratio::new(rec[1].parse()?, rec[2].parse()?);
        match &rec[0] {
            "sensitivity" => found.0 = Some(r),
            "specificity" => found.1 = Some(r),
            _ => {}
        }
    }
    Ok((found.0.context("no sensitivity")?, found.1.context("no specificity")?))
}

fn desk_pipeline() -> Result<String> {
    let start = Instant::now();
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let genes = read_fasta(GENES)?;
    ensure!(genes.len() >= 3 && genes.iter().all(|g| (1000..=5000).contains(&g.sequence.len())));

    run_cli(&["simulate", "--genes", GENES, "--out", &p("entries.csv")])?;
    run_cli(&["featurize", "--entries", &p("entries.csv"), "--genes", GENES, "--out", &p("data.csv")])?;
    let rows = load_dataset(p("data.csv"))?.len();
    ensure!(rows >= 5000, "only {rows} entries");
    run_cli(&[
        "split", "--data", &p("data.csv"), "--train-size", "6000", "--train-ratio", "0.6", "--test-size", "4000",
        "--test-ratio", "0.5", "--out", &p("split"),
    ])?;
    let (train, test) = (p("split/train.csv"), p("split/test.csv"));
    run_cli(&["train-svm", "--data", &train, "--out", &p("svm.json")])?;
    run_cli(&["train-forest", "--data", &train, "--out", &p("forest.json")])?;
    run_cli(&["train-cnn", "--data", &train, "--out", &p("cnn.json")])?;

    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for model in ["svm", "forest", "cnn"] {
        run_cli(&["evaluate", "--model", &p(&format!("{model}.json")), "--data", &test, "--out", &p(model)])?;
        let (sens, spec) = read_rates(&dir.path().join(model))?;
        let (s, t) = (*sens.numer() as f64 / *sens.denom() as f64, *spec.numer() as f64 / *spec.denom() as f64);
        summary.push(format!("{model} {:.1}/{:.1}", 100.0 * s, 100.0 * t));
        if sens < spec || sens <= Ratio::new(7, 10) {
            failures.push(model);
        }
    }
    within(start.elapsed(), Duration::from_secs(600))?;
    ensure!(failures.is_empty(), "{failures:?} miss the bar: {}", summary.join(", "));
    Ok(format!("{rows} entries; {}; {:.0?}", summary.join(", "), start.elapsed()))
}

fn correlation_screen() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let mut r: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            r.push(r[2]);
            r
        })
        .collect();
    let pairs = redundant_pairs(&correlation_of_rows(&rows)?, 0.90);
    ensure!(pairs == vec![(2, 6)], "duplicated column screen gave {pairs:?}");

    // Desk-scale screen: emitted for inspection, not required to be empty.
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run_cli(&["simulate", "--genes", GENES, "--out", &p("entries.csv")])?;
    run_cli(&["featurize", "--entries", &p("entries.csv"), "--genes", GENES, "--out", &p("data.csv")])?;
    run_cli(&["corr", "--data", &p("data.csv"), "--out", &p("corr.csv")])?;
    let data = load_dataset(p("data.csv"))?;
    let names = column_names(data.width());
    let text = std::fs::read_to_string(p("corr.csv.pairs.csv"))?;
    let listed: Vec<&str> = text.lines().skip(1).collect();
    for line in &listed {
        ensure!(line.split(',').take(2).all(|n| names.iter().any(|m| m == n)), "bad pair line {line}");
    }
    Ok(format!(
        "duplicate found; desk dataset lists {} pairs: [{}]",
        listed.len(),
        listed.iter().map(|l| l.rsplit_once(',').map_or(*l, |(a, _)| a)).collect::<Vec<_>>().join("; ")
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Result<String>); 11] = [
        ("complexity formulas", complexity_formulas),
        ("scanner equivalence", scanner_equivalence),
        ("digest reassembly", digest_reassembly),
        ("labeling oracle", labeling_oracle),
        ("metric identities", metric_identities),
        ("PCA properties", pca_properties),
        ("SVM properties", svm_properties),
        ("forest properties", forest_properties),
        ("CNN properties", cnn_properties),
        ("desk-scale pipeline", desk_pipeline),
        ("correlation screen", correlation_screen),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let line = match outcome {
            Ok(Ok(detail)) => format!("PASS  {detail}"),
            Ok(Err(e)) => format!("FAIL  {e:#}"),
            Err(p) => format!(
                "FAIL  panicked: {}",
                p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()).unwrap_or("?")
            ),
        };
        failed += usize::from(line.starts_with("FAIL"));
        println!("criterion {:>2} {name:<20} {line}", n + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
