//! Plot-ready long-format CSVs and gnuplot scripts derived from a run directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::run::DiagonalOutput;
use crate::funcineq::StabilizationReport;
use crate::moser::HarnackAudit;
use crate::{Error, Result};

/// Bins of the Harnack-ratio histogram.
pub const HISTOGRAM_BINS: usize = 10;

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Option<T>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })
}

fn script(title: &str, data: &str, xlabel: &str, ylabel: &str, extra: &str, plot: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\n{extra}plot '{data}' {plot}\n"
    )
}

/// Equal-width bins over `[min, max]` of the finite values.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in finite {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

/// Plot files for every figure whose input exists in `dir`, and the names of
/// the inputs that were not found.
pub fn plot_files(dir: &Path) -> Result<(Vec<(String, Vec<u8>)>, Vec<String>)> {
    let mut files = Vec::new();
    let mut missing = Vec::new();

    let errors = dir.join("clt_errors.csv");
    if errors.exists() {
        let text = std::fs::read_to_string(&errors)?;
        let mut csv = String::from("epsilon,origin_index,sup_error\n");
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 5 && f[4] == "false" {
                csv.push_str(&format!("{},{},{}\n", f[2], f[0], f[3]));
            }
        }
        files.push(("plots/error_vs_epsilon.csv".into(), csv.into_bytes()));
        files.push((
            "plots/error_vs_epsilon.gp".into(),
            script(
                "local CLT sup error",
                "error_vs_epsilon.csv",
                "epsilon",
                "sup error",
                "set logscale xy\n",
                "using 1:3 with points pt 7",
            )
            .into_bytes(),
        ));
    } else {
        missing.push("clt_errors.csv".into());
    }

    match read_json::<HarnackAudit>(dir, "harnack.json")? {
        Some(h) => {
            let mut csv = String::from("bin_lo,bin_hi,count\n");
            for (lo, hi, c) in histogram(&h.ratios(), HISTOGRAM_BINS) {
                csv.push_str(&format!("{lo:.17e},{hi:.17e},{c}\n"));
            }
            files.push(("plots/harnack_histogram.csv".into(), csv.into_bytes()));
            files.push((
                "plots/harnack_histogram.gp".into(),
                script(
                    "Harnack ratios",
                    "harnack_histogram.csv",
                    "sup Q- / inf Q+",
                    "count",
                    "set style fill solid 0.5\n",
                    "using (($1+$2)/2):3:($2-$1) with boxes",
                )
                .into_bytes(),
            ));
        }
        None => missing.push("harnack.json".into()),
    }

    match read_json::<DiagonalOutput>(dir, "diagonal.json")? {
        Some(d) => {
            let mut csv = String::from("log_t,log_sup_diagonal\n");
            for (t, v) in d.profile.pairs() {
                csv.push_str(&format!("{:.17e},{:.17e}\n", t.ln(), v.ln()));
            }
            files.push(("plots/diagonal_decay.csv".into(), csv.into_bytes()));
            files.push((
                "plots/diagonal_decay.gp".into(),
                script(
                    "on-diagonal decay",
                    "diagonal_decay.csv",
                    "log t",
                    "log sup p_t(x,x)",
                    "",
                    "using 1:2 with linespoints",
                )
                .into_bytes(),
            ));
        }
        None => missing.push("diagonal.json".into()),
    }

    match read_json::<StabilizationReport>(dir, "stabilization.json")? {
        Some(s) => {
            let mut csv = String::from("radius,c_s,c_p,m\n");
            for (r, v) in s.radii.iter().zip(s.tracked()) {
                csv.push_str(&format!("{r:.17e},{:.17e},{:.17e},{:.17e}\n", v[0], v[1], v[2]));
            }
            files.push(("plots/stabilization.csv".into(), csv.into_bytes()));
            files.push((
                "plots/stabilization.gp".into(),
                script(
                    "constant stabilization",
                    "stabilization.csv",
                    "radius",
                    "constant",
                    "set logscale x\n",
                    "using 1:2 with linespoints, '' using 1:3 with linespoints, '' using 1:4 with linespoints",
                )
                .into_bytes(),
            ));
        }
        None => missing.push("stabilization.json".into()),
    }
    Ok((files, missing))
}

/// Writes the plot files of a finished run into `dir/plots`. Errors when no
/// input is present; otherwise returns the written paths and the missing inputs.
pub fn emit_plot_data(dir: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let (files, missing) = plot_files(dir)?;
    if files.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = dir.join(&name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok((written, missing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_finite_value() {
        let v = [1.0, 1.5, 2.0, 2.0, f64::INFINITY, 3.0];
        let h = histogram(&v, 4);
        assert_eq!(h.len(), 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h[0].0, 1.0);
        assert!((h[3].1 - 3.0).abs() < 1e-15);
        assert_eq!(h[3].2, 1);
    }

    #[test]
    fn empty_directory_lists_every_input() {
        let dir = tempfile::tempdir().unwrap();
        match emit_plot_data(dir.path()) {
            Err(Error::MissingInputs(m)) => assert_eq!(m.len(), 4),
            other => panic!("expected missing inputs, got {other:?}"),
        }
    }

    #[test]
    fn error_table_has_one_row_per_level_and_origin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("clt_errors.csv"),
            "origin_index,origin,epsilon,sup_error,skipped\n0,5,1,0.5,false\n0,5,0.5,0.25,false\n1,9,1,0.4,false\n1,9,0.5,0,true\n",
        )
        .unwrap();
        let (written, missing) = emit_plot_data(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(missing.len(), 3);
        let csv = std::fs::read_to_string(dir.path().join("plots/error_vs_epsilon.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}
