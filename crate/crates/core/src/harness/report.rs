//! CSV metrics, heatmap tables and gnuplot scripts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{EpochRecord, RunMetrics};
use crate::error::{Error, Result};
use crate::rmt::OverlapSummary;

pub const TRAIN_HEADER: [&str; 12] = [
    "run_id",
    "epoch",
    "train_loss",
    "train_err",
    "test_loss",
    "test_err",
    "lr",
    "delta",
    "r_est_curv",
    "lambda_1",
    "overlap_top10",
    "diverged",
];

#[derive(Debug, Serialize, Deserialize)]
struct TrainRow {
    run_id: String,
    epoch: usize,
    train_loss: f64,
    train_err: f64,
    test_loss: f64,
    test_err: f64,
    lr: f64,
    delta: f64,
    r_est_curv: f64,
    lambda_1: f64,
    overlap_top10: f64,
    diverged: u8,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes one row per (run, epoch). The `diverged` column repeats the
/// run-level flag.
pub fn write_metrics_csv<W: Write>(metrics: &[RunMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(TRAIN_HEADER)?;
    for run in metrics {
        for r in &run.records {
            w.serialize(TrainRow {
                run_id: run.run_id.clone(),
                epoch: r.epoch,
                train_loss: r.train_loss,
                train_err: r.train_err,
                test_loss: r.test_loss,
                test_err: r.test_err,
                lr: r.lr,
                delta: r.delta,
                r_est_curv: r.r_est_curv,
                lambda_1: r.lambda_1,
                overlap_top10: r.overlap_top10,
                diverged: run.diverged as u8,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(metrics: &[RunMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_metrics_csv(metrics, create(path)?).map_err(|e| csv_err(path, e))
}

/// Records of one run as read back from a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRun {
    pub run_id: String,
    pub diverged: bool,
    pub records: Vec<EpochRecord>,
}

/// Groups rows by `run_id` in order of first appearance.
pub fn read_metrics_csv<R: Read>(input: R) -> csv::Result<Vec<ParsedRun>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut runs: Vec<ParsedRun> = Vec::new();
    for row in rd.deserialize() {
        let row: TrainRow = row?;
        let rec = EpochRecord {
            epoch: row.epoch,
            train_loss: row.train_loss,
            train_err: row.train_err,
            test_loss: row.test_loss,
            test_err: row.test_err,
            lr: row.lr,
            delta: row.delta,
            r_est_curv: row.r_est_curv,
            lambda_1: row.lambda_1,
            overlap_top10: row.overlap_top10,
        };
        match runs.iter_mut().find(|r| r.run_id == row.run_id) {
            Some(run) => run.records.push(rec),
            None => runs.push(ParsedRun {
                run_id: row.run_id,
                diverged: row.diverged != 0,
                records: vec![rec],
            }),
        }
    }
    Ok(runs)
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<ParsedRun>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_metrics_csv(f).map_err(|e| csv_err(path, e))
}

/// Heatmap entry: best-epoch error of a (delta, eta) cell minus the best
/// over all cells, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub delta: f64,
    pub eta: f64,
    pub d_train: f64,
    pub d_test: f64,
}

/// Per-cell best-epoch error minus the global best, separately for train
/// and test. Cells are keyed by (delta, eta) in order of first appearance;
/// all runs must share one learning rate.
pub fn heatmap_deltas(metrics: &[RunMetrics]) -> Result<Vec<HeatmapCell>> {
    let first = metrics
        .first()
        .ok_or_else(|| Error::invalid("heatmap needs at least one run"))?;
    if metrics.iter().any(|m| m.cell.lr != first.cell.lr) {
        return Err(Error::invalid("heatmap runs must share one learning rate"));
    }
    // (delta, eta, sum train, sum test, count)
    let mut acc: Vec<(f64, f64, f64, f64, usize)> = Vec::new();
    for m in metrics {
        if m.records.is_empty() {
            return Err(Error::invalid(format!("run {} has no records", m.run_id)));
        }
        let (tr, te) = (m.best_train_err(), m.best_test_err());
        match acc
            .iter_mut()
            .find(|a| a.0 == m.cell.delta && a.1 == m.cell.eta)
        {
            Some(a) => {
                a.2 += tr;
                a.3 += te;
                a.4 += 1;
            }
            None => acc.push((m.cell.delta, m.cell.eta, tr, te, 1)),
        }
    }
    let means: Vec<(f64, f64, f64, f64)> = acc
        .iter()
        .map(|&(d, e, tr, te, n)| (d, e, tr / n as f64, te / n as f64))
        .collect();
    let best_tr = means.iter().map(|m| m.2).fold(f64::INFINITY, f64::min);
    let best_te = means.iter().map(|m| m.3).fold(f64::INFINITY, f64::min);
    Ok(means
        .into_iter()
        .map(|(delta, eta, tr, te)| HeatmapCell {
            delta,
            eta,
            d_train: tr - best_tr,
            d_test: te - best_te,
        })
        .collect())
}

pub fn write_heatmap_csv<W: Write>(cells: &[HeatmapCell], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(["delta", "eta", "d_train", "d_test"])?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_heatmap_csv(cells: &[HeatmapCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_heatmap_csv(cells, create(path)?).map_err(|e| csv_err(path, e))
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Gnuplot `matrix nonuniform` blocks, train first then test, separated by
/// two blank lines so they can be addressed with `index 0` and `index 1`.
/// Rows are deltas, columns etas; missing cells are NaN.
pub fn write_heatmap_matrix<W: Write>(cells: &[HeatmapCell], mut out: W) -> std::io::Result<()> {
    let deltas = sorted_unique(cells.iter().map(|c| c.delta).collect());
    let etas = sorted_unique(cells.iter().map(|c| c.eta).collect());
    for (block, name) in ["train", "test"].iter().enumerate() {
        if block > 0 {
            writeln!(out)?;
            writeln!(out)?;
        }
        writeln!(out, "# {name}")?;
        write!(out, "{}", etas.len())?;
        for e in &etas {
            write!(out, " {e}")?;
        }
        writeln!(out)?;
        for d in &deltas {
            write!(out, "{d}")?;
            for e in &etas {
                let v = cells
                    .iter()
                    .find(|c| c.delta == *d && c.eta == *e)
                    .map_or(f64::NAN, |c| if block == 0 { c.d_train } else { c.d_test });
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn emit_heatmap_matrix(cells: &[HeatmapCell], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), |w| write_heatmap_matrix(cells, w))
}

fn gp_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Gnuplot script with three panels: train error, test error and damping,
/// one curve per run, reading `csv_name` relative to the script.
pub fn write_plot_script<W: Write>(
    metrics: &[RunMetrics],
    csv_name: &str,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "set datafile separator ','")?;
    writeln!(out, "set terminal pngcairo size 1500,450")?;
    writeln!(out, "set output 'curves.png'")?;
    writeln!(out, "set multiplot layout 1,3")?;
    writeln!(out, "set key off")?;
    writeln!(out, "set xlabel 'epoch'")?;
    let data = gp_quote(csv_name);
    let panels = [
        ("train error", 4, false),
        ("test error", 6, false),
        ("damping", 8, true),
    ];
    for (title, col, log) in panels {
        writeln!(out, "set title {}", gp_quote(title))?;
        writeln!(
            out,
            "{}",
            if log {
                "set logscale y"
            } else {
                "unset logscale y"
            }
        )?;
        if metrics.is_empty() {
            writeln!(out, "plot {data} using 2:{col} with lines")?;
            continue;
        }
        let curves: Vec<String> = metrics
            .iter()
            .map(|m| {
                format!(
                    "{data} using 2:(strcol(1) eq {} ? ${col} : NaN) with lines title {}",
                    gp_quote(&m.run_id),
                    gp_quote(&m.run_id)
                )
            })
            .collect();
        writeln!(out, "plot {}", curves.join(", \\\n     "))?;
    }
    writeln!(out, "unset multiplot")?;
    Ok(())
}

pub fn emit_plot_script(
    metrics: &[RunMetrics],
    csv_name: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), |w| write_plot_script(metrics, csv_name, w))
}

/// Heatmap script reading the matrix blocks of [`write_heatmap_matrix`].
pub fn write_heatmap_script<W: Write>(matrix_name: &str, mut out: W) -> std::io::Result<()> {
    let data = gp_quote(matrix_name);
    writeln!(out, "set terminal pngcairo size 1000,450")?;
    writeln!(out, "set output 'heatmap.png'")?;
    writeln!(out, "set multiplot layout 1,2")?;
    writeln!(out, "set logscale xy")?;
    writeln!(out, "set xlabel 'eta'")?;
    writeln!(out, "set ylabel 'delta'")?;
    writeln!(out, "set palette defined (0 'white', 1 'black')")?;
    for (i, name) in ["train", "test"].iter().enumerate() {
        writeln!(out, "set title 'error change ({name})'")?;
        writeln!(
            out,
            "plot {data} index {i} nonuniform matrix with points pt 5 ps 6 palette notitle"
        )?;
    }
    writeln!(out, "unset multiplot")?;
    Ok(())
}

pub fn emit_heatmap_script(matrix_name: &str, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), |w| write_heatmap_script(matrix_name, w))
}

pub fn write_rmt_csv<W: Write>(rows: &[OverlapSummary], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "nu",
        "s",
        "predicted_overlap",
        "measured_mean",
        "measured_std",
        "n_seeds",
    ])?;
    for r in rows {
        w.serialize((
            r.nu,
            r.s,
            r.predicted,
            r.measured_mean,
            r.measured_std,
            r.n_seeds,
        ))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_rmt_csv(rows: &[OverlapSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_rmt_csv(rows, create(path)?).map_err(|e| csv_err(path, e))
}

pub fn write_probe_csv<W: Write>(per_probe: &[f64], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(["probe", "estimate"])?;
    for (i, v) in per_probe.iter().enumerate() {
        w.serialize((i, v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_probe_csv(per_probe: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_probe_csv(per_probe, create(path)?).map_err(|e| csv_err(path, e))
}
