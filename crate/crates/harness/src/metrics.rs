//! Report serialization: fixed-column delimiter-separated files with header
//! rows, written in a deterministic order so identical runs produce
//! byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::run::RunReport;

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn render_assignment(report: &RunReport) -> String {
    let mut out = String::from("task,node,e2e_ms,weight\n");
    for row in &report.assignment {
        let node = row.node.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = writeln!(out, "{},{},{},{}", row.task, node, fmt_f64(row.e2e_ms), row.weight);
    }
    out
}

pub fn render_node_failures(report: &RunReport) -> String {
    let mut out = String::from("node,launched,failed,failure_rate\n");
    for row in &report.node_failures {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.node,
            row.launched,
            row.failed,
            fmt_f64(row.failure_rate)
        );
    }
    out
}

pub fn render_task_metrics(report: &RunReport) -> String {
    let mut out =
        String::from("node,task,released,dropped,exceeded,drop_ratio,exceed_ratio,mean_e2e_ms,mean_acc_loss\n");
    for row in &report.task_metrics {
        let node = row.node.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            node,
            row.task,
            row.released,
            row.dropped,
            row.exceeded,
            fmt_f64(row.drop_ratio),
            fmt_f64(row.exceed_ratio),
            fmt_f64(row.mean_e2e_ms),
            fmt_f64(row.mean_acc_loss)
        );
    }
    out
}

pub fn render_failures(report: &RunReport) -> String {
    let mut out = String::from("task,instance,leg,cause\n");
    for row in &report.failures {
        let _ = writeln!(out, "{},{},{},{}", row.task, row.instance, row.leg.label(), row.cause.label());
    }
    out
}

pub fn render_link_throughput(report: &RunReport) -> String {
    let mut out = String::from("src,dst,bucket_s,mbits\n");
    for row in &report.link_throughput {
        let _ = writeln!(out, "{},{},{},{}", row.src, row.dst, row.bucket_s, fmt_f64(row.mbits));
    }
    out
}

pub fn render_i2v_timeline(report: &RunReport) -> String {
    let mut out = String::from("vehicle,start_ms,end_ms,node,kind,mbits\n");
    for row in &report.i2v_timelines {
        let node = row.node.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.vehicle,
            fmt_f64(row.start_ms),
            fmt_f64(row.end_ms),
            node,
            row.kind,
            fmt_f64(row.mbits)
        );
    }
    out
}

pub fn render_transfer_bench(report: &RunReport) -> String {
    let mut out = String::from("coding,repeat,goodput_mbps,elapsed_ms,delivered_fraction,batches_sent\n");
    for row in &report.transfer_bench {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.coding,
            row.repeat,
            fmt_f64(row.goodput_mbps),
            fmt_f64(row.elapsed_ms),
            fmt_f64(row.delivered_fraction),
            row.batches_sent
        );
    }
    out
}

pub fn render_ecc_bench(report: &RunReport) -> String {
    let mut out = String::from("app_rate_mbps,erasure,pdr_with_ecc,pdr_without_ecc,block_decode_rate\n");
    for row in &report.ecc_bench {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(row.app_rate_mbps),
            fmt_f64(row.erasure),
            fmt_f64(row.pdr_with_ecc),
            fmt_f64(row.pdr_without_ecc),
            fmt_f64(row.block_decode_rate)
        );
    }
    out
}

pub fn render_deadline_note(report: &RunReport) -> Option<String> {
    report.deadline_note.as_ref().map(|d| {
        let mut out =
            String::from("sensing_range_m,coverage_fraction,speed_kmh,exact_ms,tier_ms\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(d.sensing_range_m),
            fmt_f64(d.coverage_fraction),
            fmt_f64(d.speed_kmh),
            fmt_f64(d.exact_ms),
            fmt_f64(d.tier_ms)
        );
        out
    })
}

pub fn render_digest(report: &RunReport) -> String {
    format!(
        "scenario={}\nseed={}\nconfig_digest={}\n",
        report.scenario, report.seed, report.config_digest
    )
}

/// Write every metrics file for one run into `out_dir`.
pub fn write_report(report: &RunReport, out_dir: &Path) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("digest.txt"), render_digest(report))?;
    fs::write(out_dir.join("assignment.csv"), render_assignment(report))?;
    fs::write(out_dir.join("node_failure.csv"), render_node_failures(report))?;
    fs::write(out_dir.join("task_metrics.csv"), render_task_metrics(report))?;
    fs::write(out_dir.join("failures.csv"), render_failures(report))?;
    fs::write(out_dir.join("link_throughput.csv"), render_link_throughput(report))?;
    fs::write(out_dir.join("i2v_timeline.csv"), render_i2v_timeline(report))?;
    if !report.transfer_bench.is_empty() {
        fs::write(out_dir.join("transfer_bench.csv"), render_transfer_bench(report))?;
    }
    if !report.ecc_bench.is_empty() {
        fs::write(out_dir.join("ecc_bench.csv"), render_ecc_bench(report))?;
    }
    if let Some(text) = render_deadline_note(report) {
        fs::write(out_dir.join("deadline_derivation.csv"), text)?;
    }
    if !report.events.is_empty() {
        fs::write(out_dir.join("events.log"), report.events.join("\n") + "\n")?;
    }
    Ok(())
}

/// Digest of every metrics file, for reproducibility checks.
pub fn report_fingerprint(out_dir: &Path) -> io::Result<String> {
    use sha2::{Digest, Sha256};
    let mut names: Vec<_> = fs::read_dir(out_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update(fs::read(out_dir.join(&name))?);
        hasher.update([0xFF]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
