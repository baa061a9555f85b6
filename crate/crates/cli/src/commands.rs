use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use poe_supcon::dataset::{
    generate_synthetic, generate_synthetic_pair, import_csv, load_dataset, write_dataset, CognitiveLabel, Dataset,
    Gender, Language, Modality, MANIFEST_FILE,
};
use poe_supcon::evaluation::{disparity, fold_uar_tsv, to_csv, Axis, Metric, MetricSet, Subgroup};
use poe_supcon::gradcheck::run_gradcheck;
use poe_supcon::training::{ablation_grid, run_experiment_with_eval, Fusion, Report};
use poe_supcon::{Error, Result};

use crate::args::{ExperimentOverrides, SynthArgs};

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Participant-level counts laid out like the corpus statistics table:
/// language rows, label × gender columns, sample totals at the right.
fn summary_table(ds: &Dataset) -> String {
    let mut out = format!(
        "{:<8} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}\n",
        "language", "MCI-M", "MCI-F", "NC-M", "NC-F", "samples", "MCI"
    );
    let rows: [(&str, Option<Language>); 3] = [("En", Some(Language::En)), ("Zh", Some(Language::Zh)), ("total", None)];
    for (name, lang) in rows {
        let in_row: Vec<_> = ds.samples().iter().filter(|s| lang.is_none_or(|l| s.language == l)).collect();
        let participants = |label: CognitiveLabel, gender: Gender| {
            let mut ids: Vec<&str> = in_row
                .iter()
                .filter(|s| s.label == label && s.gender == gender)
                .map(|s| s.participant_id.as_str())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        let mci = in_row.iter().filter(|s| s.label == CognitiveLabel::MCI).count();
        out.push_str(&format!(
            "{:<8} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8}\n",
            name,
            participants(CognitiveLabel::MCI, Gender::M),
            participants(CognitiveLabel::MCI, Gender::F),
            participants(CognitiveLabel::NC, Gender::M),
            participants(CognitiveLabel::NC, Gender::F),
            in_row.len(),
            mci
        ));
    }
    let (mci, nc) = ds.label_counts();
    out.push_str(&format!("samples: {} ({} MCI, {} NC)\n", ds.len(), mci, nc));
    out
}

pub fn synth(config: Option<&Path>, out: &Path, flipped: bool, args: &SynthArgs) -> Result<ExitCode> {
    let cfg = args.resolve(config)?;
    create_dir(out)?;
    if flipped {
        let (ds, twin) = generate_synthetic_pair(&cfg)?;
        write_dataset(&ds, out)?;
        write_dataset(&twin, &out.join("bias_flipped"))?;
        print!("{}", summary_table(&ds));
    } else {
        let ds = generate_synthetic(&cfg)?;
        write_dataset(&ds, out)?;
        print!("{}", summary_table(&ds));
    }
    Ok(ExitCode::SUCCESS)
}

/// Accepts either a manifest file or the directory holding it.
fn load(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        load_dataset(&path.join(MANIFEST_FILE))
    } else {
        load_dataset(path)
    }
}

fn load_pair(data: &Path, eval_data: Option<&Path>) -> Result<(Dataset, Option<Dataset>)> {
    let train = load(data)?;
    let eval = eval_data.map(load).transpose()?;
    Ok((train, eval))
}

fn metrics_line(label: &str, size: u64, m: &MetricSet) -> String {
    format!(
        "{label:<14} {size:>5} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        m.uar.to_string(),
        m.f1.to_string(),
        m.sensitivity.to_string(),
        m.specificity.to_string(),
        m.precision.to_string()
    )
}

fn metrics_header() -> String {
    format!(
        "{:<14} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "subgroup", "n", "uar", "f1", "sens", "spec", "prec"
    )
}

fn render_report(report: &Report, subgroups: &[Subgroup]) -> String {
    let mut out = format!("{}  ({} folds, {:?} aggregation)\n", report.name, report.folds.len(), report.aggregation);
    out.push_str(&metrics_header());
    for g in subgroups {
        if let Some(a) = report.aggregate_for(*g) {
            out.push_str(&metrics_line(&g.to_string(), a.size, &a.metrics));
        }
    }
    for axis in [Axis::Language, Axis::Gender] {
        match disparity(report, axis) {
            Ok(d) => out.push_str(&format!("{axis:?} disparity: {d:.6}\n")),
            Err(_) => out.push_str(&format!("{axis:?} disparity: n/a\n")),
        }
    }
    if let Some(s) = report.mean_picture_silhouette {
        out.push_str(&format!("picture silhouette: {s:.6}\n"));
    }
    out
}

pub fn train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    eval_data: Option<&Path>,
    jobs: usize,
    checkpoints: bool,
    overrides: &ExperimentOverrides,
) -> Result<ExitCode> {
    let cfg = overrides.resolve(config)?;
    let (train_ds, eval_ds) = load_pair(data, eval_data)?;
    let (report, outcomes) = run_experiment_with_eval(&train_ds, eval_ds.as_ref().unwrap_or(&train_ds), &cfg, jobs)?;

    create_dir(out)?;
    write(&out.join("report.json"), &report.to_json()?)?;
    write(&out.join("report.csv"), &to_csv(&report))?;
    write(&out.join("fold_uar.tsv"), &fold_uar_tsv(&report))?;
    if checkpoints {
        for o in &outcomes {
            o.save_checkpoint(&out.join("checkpoints").join(format!("fold_{:02}", o.report.fold_index)))?;
        }
    }
    print!("{}", render_report(&report, &Subgroup::ALL));
    Ok(ExitCode::SUCCESS)
}

pub fn eval(report_path: &Path, subgroups: &[String]) -> Result<ExitCode> {
    let text = fs::read_to_string(report_path).map_err(|source| Error::Io { path: report_path.to_path_buf(), source })?;
    let report: Report = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: report_path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let groups: Vec<Subgroup> = if subgroups.is_empty() {
        Subgroup::ALL.to_vec()
    } else {
        subgroups.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    print!("{}", render_report(&report, &groups));
    Ok(ExitCode::SUCCESS)
}

fn delta(a: Metric, base: Metric) -> String {
    match (a.0, base.0) {
        (Some(x), Some(y)) => format!("{:.6}", x - y),
        _ => "n/a".to_string(),
    }
}

/// Merged CSV of all cells with deltas against the first (baseline) cell.
pub fn ablation_csv(reports: &[Report]) -> String {
    let mut out = String::from(
        "config,subgroup,size,uar,f1,sensitivity,specificity,precision,\
         delta_uar,delta_f1,delta_sensitivity,delta_specificity,delta_precision,note\n",
    );
    let Some(baseline) = reports.first() else {
        return out;
    };
    for r in reports {
        let single = r.config.effective_modalities().len() == 1;
        let note = if single && r.config.fusion == Fusion::Poe && !r.config.include_joint_expert {
            "PoE = Concat (single modality)"
        } else {
            ""
        };
        for a in &r.aggregate {
            let Some(b) = baseline.aggregate_for(a.subgroup) else { continue };
            let (m, bm) = (&a.metrics, &b.metrics);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.name,
                a.subgroup,
                a.size,
                m.uar,
                m.f1,
                m.sensitivity,
                m.specificity,
                m.precision,
                delta(m.uar, bm.uar),
                delta(m.f1, bm.f1),
                delta(m.sensitivity, bm.sensitivity),
                delta(m.specificity, bm.specificity),
                delta(m.precision, bm.precision),
                note
            ));
        }
    }
    out
}

pub fn ablate(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    eval_data: Option<&Path>,
    jobs: usize,
    overrides: &ExperimentOverrides,
) -> Result<ExitCode> {
    let base = overrides.resolve(config)?;
    let (train_ds, eval_ds) = load_pair(data, eval_data)?;
    let eval_ds = eval_ds.as_ref().unwrap_or(&train_ds);
    let cells = ablation_grid(&base);
    if cells.iter().any(|c| !c.effective_modalities().iter().all(|m| train_ds.dim(*m).is_some())) {
        let missing: Vec<Modality> = Modality::ALL.into_iter().filter(|m| train_ds.dim(*m).is_none()).collect();
        log::warn!("dataset lacks {missing:?}; cells needing them will fail");
    }
    let mut reports = Vec::with_capacity(cells.len());
    for cfg in &cells {
        reports.push(run_experiment_with_eval(&train_ds, eval_ds, cfg, jobs)?.0);
    }

    let report_dir: PathBuf = out.join("reports");
    create_dir(&report_dir)?;
    for r in &reports {
        write(&report_dir.join(format!("{}.json", r.name.replace('+', "_"))), &r.to_json()?)?;
    }
    let csv = ablation_csv(&reports);
    write(&out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(seed: u64, corrupt: bool) -> Result<ExitCode> {
    let table = run_gradcheck(seed, corrupt)?;
    print!("{}", table.render());
    if table.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed");
        Ok(ExitCode::from(1))
    }
}

pub fn convert(samples: &Path, embeddings: &[String], out: &Path) -> Result<ExitCode> {
    let sidecars = embeddings
        .iter()
        .map(|spec| {
            let (m, p) = spec
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected MODALITY=PATH, got {spec:?}")))?;
            Ok((m.parse::<Modality>()?, PathBuf::from(p)))
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = import_csv(samples, &sidecars)?;
    write_dataset(&ds, out)?;
    for w in ds.structure_warnings() {
        log::warn!("{w}");
    }
    print!("{}", summary_table(&ds));
    Ok(ExitCode::SUCCESS)
}
