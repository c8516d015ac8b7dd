//! Plot scripts for the CSV outputs.
//!
//! Nothing is rendered here. Each script is plain Python (matplotlib) that
//! reads the CSVs it was generated from; the same inputs always give the
//! same bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::output::{Table, RETRIEVAL_SUMMARY, SWEEP_SUMMARY, TELEMETRY, TRAIN_LOG};

const PRELUDE: &str = r##"import csv
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="") as f:
        lines = [l for l in f if not l.startswith("#")]
    return list(csv.DictReader(lines))


def num(rows, key):
    return [float(r[key]) for r in rows]

"##;

fn py_str(s: &str) -> String {
    let escaped = s.replace('\\', "\\\\").replace('"', "\\\"");
    format!("\"{escaped}\"")
}

fn py_list(paths: &[String]) -> String {
    let items: Vec<String> = paths.iter().map(|p| format!("    {},\n", py_str(p))).collect();
    format!("[\n{}]", items.concat())
}

fn loss_curves(paths: &[String]) -> String {
    format!(
        r#"{PRELUDE}
PATHS = {list}

fig, (ax_loss, ax_lr) = plt.subplots(2, 1, sharex=True, figsize=(9, 6))
for path in PATHS:
    rows = read(path)
    label = rows[0]["method"] if rows else path
    ax_loss.plot(num(rows, "step"), num(rows, "tta_loss"), label=label, linewidth=0.8)
    ax_lr.plot(num(rows, "step"), num(rows, "applied_lr"), label=label, linewidth=0.8)
ax_loss.set_ylabel("test objective")
ax_lr.set_ylabel("applied learning rate")
ax_lr.set_xlabel("step")
ax_loss.legend()
fig.tight_layout()
fig.savefig("loss_curves.png", dpi=150)
"#,
        list = py_list(paths)
    )
}

fn lr_sweep(paths: &[String]) -> String {
    format!(
        r#"{PRELUDE}
PATHS = {list}

fig, ax = plt.subplots(figsize=(6, 4))
for path in PATHS:
    rows = read(path)
    methods = []
    for r in rows:
        if r["method"] not in methods:
            methods.append(r["method"])
    for m in methods:
        sel = [r for r in rows if r["method"] == m]
        ax.plot(num(sel, "alpha"), num(sel, "mean_final_accuracy"), marker="o",
                label="%s (std %.4f)" % (m, float(sel[0]["grid_std"])))
ax.set_xscale("log")
ax.set_xlabel("initial learning rate")
ax.set_ylabel("final accuracy")
ax.legend()
fig.tight_layout()
fig.savefig("lr_sweep.png", dpi=150)
"#,
        list = py_list(paths)
    )
}

fn retrieval(paths: &[String]) -> String {
    format!(
        r#"{PRELUDE}
PATHS = {list}

fig, ax = plt.subplots(figsize=(6, 4))
for path in PATHS:
    rows = read(path)
    ax.plot(num(rows, "retrieval_size"), num(rows, "mean_final_accuracy"), marker="o", label=path)
ax.set_xlabel("retrieval size")
ax.set_ylabel("final accuracy")
ax.legend()
fig.tight_layout()
fig.savefig("retrieval_sweep.png", dpi=150)
"#,
        list = py_list(paths)
    )
}

fn train_log(paths: &[String]) -> String {
    format!(
        r#"{PRELUDE}
PATHS = {list}

fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
for path in PATHS:
    rows = read(path)
    ax_loss.plot(num(rows, "epoch"), num(rows, "loss"), label=path)
    ax_acc.plot(num(rows, "epoch"), num(rows, "accuracy"), label=path)
ax_loss.set_xlabel("epoch")
ax_loss.set_ylabel("cross-entropy")
ax_acc.set_xlabel("epoch")
ax_acc.set_ylabel("training accuracy")
ax_acc.legend()
fig.tight_layout()
fig.savefig("train_log.png", dpi=150)
"#,
        list = py_list(paths)
    )
}

/// Writes one script per kind of input table into `out_dir` and returns the
/// script paths. Tables are identified by their schema line; every column a
/// script reads must be present.
pub fn emit_plots(csv_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if csv_paths.is_empty() {
        return Err(Error::Domain("no CSV files given".into()));
    }
    let mut telemetry = Vec::new();
    let mut sweeps = Vec::new();
    let mut retrievals = Vec::new();
    let mut logs = Vec::new();
    for path in csv_paths {
        let table = Table::load(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let name = path.display().to_string();
        match table.schema {
            s if s == TELEMETRY => telemetry.push(name),
            s if s == SWEEP_SUMMARY => sweeps.push(name),
            s if s == RETRIEVAL_SUMMARY => retrievals.push(name),
            s if s == TRAIN_LOG => logs.push(name),
            s => {
                return Err(Error::Format(format!(
                    "{name}: no plot is defined for schema {}",
                    s.tag()
                )))
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let groups: [(&[String], &str, fn(&[String]) -> String); 4] = [
        (&telemetry, "plot_loss_curves.py", loss_curves),
        (&sweeps, "plot_lr_sweep.py", lr_sweep),
        (&retrievals, "plot_retrieval_sweep.py", retrieval),
        (&logs, "plot_train_log.py", train_log),
    ];
    for (paths, file, render) in groups {
        if paths.is_empty() {
            continue;
        }
        let target = out_dir.join(file);
        fs::write(&target, render(paths))?;
        written.push(target);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    const TEL: &str = "# schema=telemetry/1\nstep,method,severity,discrepancy,applied_lr,tta_loss,correct_count,bank_size\n0,fixed,1,-1,0.05,0.3,14,0\n";

    #[test]
    fn loss_script_overlays_every_input() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", TEL);
        let b = write(dir.path(), "b.csv", &TEL.replace("fixed", "dltta"));
        let out = emit_plots(&[a.clone(), b.clone()], &dir.path().join("plots")).unwrap();
        assert_eq!(out.len(), 1);
        let script = fs::read_to_string(&out[0]).unwrap();
        assert!(script.contains(&py_str(&a.display().to_string())));
        assert!(script.contains(&py_str(&b.display().to_string())));
        assert!(script.contains("for path in PATHS"));
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let bad = TEL.replace(",tta_loss", "");
        let p = write(dir.path(), "bad.csv", &bad);
        let err = emit_plots(&[p], dir.path()).unwrap_err().to_string();
        assert!(err.contains("tta_loss"), "{err}");
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", TEL);
        let first = fs::read(&emit_plots(&[a.clone()], &dir.path().join("p1")).unwrap()[0]).unwrap();
        let second = fs::read(&emit_plots(&[a], &dir.path().join("p2")).unwrap()[0]).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn paths_are_quoted() {
        assert_eq!(py_str(r#"a"b\c"#), r#""a\"b\\c""#);
    }
}
