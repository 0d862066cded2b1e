//! Pool-balance observability: a windowed snapshot of trainer timing and
//! rollout production, rendered to a fixed-format text report. The report
//! is the sole signal the scaling maintainer consumes, so its layout is
//! frozen — `render_report` output is covered by golden-file tests and
//! `parse_report` recovers every numeric field for diagnostics and tests.

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::scale::ScalingDecision;

/// Health of one rollout instance over the report window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceStatus {
    Healthy,
    /// Marked unavailable, or accepted under half of what it produced.
    Suspect,
}

impl fmt::Display for InstanceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstanceStatus::Healthy => "healthy",
            InstanceStatus::Suspect => "suspect",
        })
    }
}

/// One line of the per-instance layout table.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRow {
    pub uid: String,
    pub gpus: u32,
    pub produced: u64,
    pub accepted: u64,
    pub accept_rate: f64,
    pub throughput_per_gpu: f64,
    pub status: InstanceStatus,
}

/// Aggregated view of the last `window_versions` trainer versions: wall
/// clock and step timing, production counts across the fleet, and the
/// per-instance layout in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceWindow {
    pub window_versions: u64,
    pub wall_time_sec: f64,
    /// Benchmark evaluation time. Always 0 here: this harness runs no
    /// evals, the field is kept so the report shape stays stable.
    pub eval_time_sec: f64,
    pub training_time_sec: f64,
    pub avg_step_time_sec: f64,
    pub avg_batch_wait_sec: f64,
    /// Fraction of training time spent waiting on rollout data:
    /// total batch wait over total step time.
    pub wait_fraction: f64,
    pub total_raas_gpus: u32,
    /// Trajectories produced by all instances in the window.
    pub produced: u64,
    /// Trajectories accepted into trainer buffers.
    pub entered: u64,
    /// Fresh trajectories drained into training batches.
    pub consumed: u64,
    /// Trajectories dropped at batch time for exceeding the staleness
    /// bound. Advisory: it does not enter the scaling math.
    pub stale_skipped: u64,
    pub layout: Vec<LayoutRow>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl BalanceWindow {
    pub fn accept_rate(&self) -> f64 {
        ratio(self.entered, self.produced)
    }

    pub fn stale_rate(&self) -> f64 {
        ratio(self.stale_skipped, self.entered)
    }

    pub fn throughput_per_gpu(&self) -> f64 {
        if self.total_raas_gpus == 0 {
            0.0
        } else {
            self.entered as f64 / self.total_raas_gpus as f64
        }
    }

    pub fn produce_consume_ratio(&self) -> f64 {
        ratio(self.entered, self.consumed)
    }
}

fn field(out: &mut String, name: &str, value: fmt::Arguments<'_>) {
    writeln!(out, "{name:<23}: {value}").expect("string write");
}

/// Renders the balance report. The layout is frozen: three field blocks
/// (window, production, scaling decision) separated by blank lines, then
/// the per-instance table and a totals line. Times use 2 decimals,
/// fractions 4, counts render as integers; zero denominators render as 0.
pub fn render_report(window: &BalanceWindow, decision: &ScalingDecision) -> String {
    let mut out = String::new();
    let n = window.window_versions;

    writeln!(out, "--- Window (last {n} iterations) ---").expect("string write");
    field(&mut out, "wall_time_sec", format_args!("{:.2}", window.wall_time_sec));
    field(&mut out, "eval_time_sec", format_args!("{:.2}", window.eval_time_sec));
    field(&mut out, "training_time_sec", format_args!("{:.2}", window.training_time_sec));
    field(&mut out, "avg_step_time_sec", format_args!("{:.2}", window.avg_step_time_sec));
    field(&mut out, "avg_batch_wait_sec", format_args!("{:.2}", window.avg_batch_wait_sec));
    field(&mut out, "rollout_wait_fraction", format_args!("{:.4}", window.wait_fraction));
    out.push('\n');

    writeln!(out, "--- Production ---").expect("string write");
    field(&mut out, "total_raas_gpus", format_args!("{}", window.total_raas_gpus));
    field(&mut out, "produced", format_args!("{}", window.produced));
    field(&mut out, "entered", format_args!("{}", window.entered));
    field(&mut out, "  accept_rate", format_args!("{:.4}", window.accept_rate()));
    field(&mut out, "consumed", format_args!("{}", window.consumed));
    field(&mut out, "stale_skipped", format_args!("{}", window.stale_skipped));
    field(&mut out, "  stale_rate", format_args!("{:.4}", window.stale_rate()));
    field(&mut out, "throughput_per_gpu", format_args!("{:.2}", window.throughput_per_gpu()));
    field(&mut out, "produce_consume_ratio", format_args!("{:.4}", window.produce_consume_ratio()));
    out.push('\n');

    writeln!(out, "--- Scaling decision ---").expect("string write");
    field(&mut out, "branch", format_args!("{}", decision.branch));
    field(&mut out, "G_target", format_args!("{}", decision.g_target));
    field(&mut out, "estimated_delta_gpus", format_args!("{:+}", decision.estimated_delta_gpus));
    field(
        &mut out,
        "weight_transfer_active",
        format_args!("{}", decision.weight_transfer_active),
    );
    out.push('\n');

    writeln!(out, "--- RaaS Instance Layout (last {n} iterations) ---").expect("string write");
    writeln!(
        out,
        "uid               gpus    produced    accepted   accept_rate  throughput/gpu    status"
    )
    .expect("string write");
    let mut total_gpus: u64 = 0;
    let mut total_produced: u64 = 0;
    let mut total_accepted: u64 = 0;
    for row in &window.layout {
        writeln!(
            out,
            "{:<18}{:>4}{:>12}{:>12}{:>14.4}{:>16.2}    {}",
            row.uid,
            row.gpus,
            row.produced,
            row.accepted,
            row.accept_rate,
            row.throughput_per_gpu,
            row.status,
        )
        .expect("string write");
        total_gpus += u64::from(row.gpus);
        total_produced += row.produced;
        total_accepted += row.accepted;
    }
    writeln!(out, "---").expect("string write");
    writeln!(
        out,
        "Total: {} instances, {} GPUs, {} produced, {} accepted",
        window.layout.len(),
        total_gpus,
        total_produced,
        total_accepted,
    )
    .expect("string write");
    out
}

/// Every value recovered from a rendered report.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub window_versions: u64,
    pub wall_time_sec: f64,
    pub eval_time_sec: f64,
    pub training_time_sec: f64,
    pub avg_step_time_sec: f64,
    pub avg_batch_wait_sec: f64,
    pub wait_fraction: f64,
    pub total_raas_gpus: u32,
    pub produced: u64,
    pub entered: u64,
    pub accept_rate: f64,
    pub consumed: u64,
    pub stale_skipped: u64,
    pub stale_rate: f64,
    pub throughput_per_gpu: f64,
    pub produce_consume_ratio: f64,
    pub branch: String,
    pub g_target: u32,
    pub estimated_delta_gpus: i64,
    pub weight_transfer_active: bool,
    pub layout: Vec<LayoutRow>,
    pub total_instances: usize,
    pub total_gpus: u64,
    pub total_produced: u64,
    pub total_accepted: u64,
}

#[derive(Debug, Error, PartialEq)]
#[error("malformed balance report: {0}")]
pub struct ReportParseError(pub String);

fn bad(msg: impl Into<String>) -> ReportParseError {
    ReportParseError(msg.into())
}

struct FieldLines<'a> {
    lines: &'a [&'a str],
    pos: usize,
}

impl<'a> FieldLines<'a> {
    fn expect_header(&mut self, prefix: &str) -> Result<&'a str, ReportParseError> {
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| bad(format!("missing header {prefix:?}")))?;
        if !line.starts_with(prefix) {
            return Err(bad(format!("expected header {prefix:?}, got {line:?}")));
        }
        self.pos += 1;
        Ok(line)
    }

    fn take_field(&mut self, name: &str) -> Result<&'a str, ReportParseError> {
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| bad(format!("missing field {name:?}")))?;
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| bad(format!("field line without colon: {line:?}")))?;
        if key.trim_end() != name {
            return Err(bad(format!("expected field {name:?}, got {:?}", key.trim_end())));
        }
        self.pos += 1;
        Ok(value.trim())
    }

    fn skip_blank(&mut self) {
        while self.lines.get(self.pos).is_some_and(|l| l.trim().is_empty()) {
            self.pos += 1;
        }
    }
}

fn parse_num<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ReportParseError> {
    value
        .parse()
        .map_err(|_| bad(format!("field {name:?} has unparseable value {value:?}")))
}

fn window_len(header: &str) -> Result<u64, ReportParseError> {
    let inner = header
        .split_once("(last ")
        .and_then(|(_, rest)| rest.split_once(" iterations)"))
        .map(|(n, _)| n)
        .ok_or_else(|| bad(format!("header without window length: {header:?}")))?;
    parse_num("window length", inner)
}

/// Recovers every field from `render_report` output. Intended for tests
/// and diagnostics; it insists on the exact field order the renderer
/// emits.
pub fn parse_report(text: &str) -> Result<ParsedReport, ReportParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut f = FieldLines { lines: &lines, pos: 0 };

    let window_versions = window_len(f.expect_header("--- Window (last ")?)?;
    let wall_time_sec = parse_num("wall_time_sec", f.take_field("wall_time_sec")?)?;
    let eval_time_sec = parse_num("eval_time_sec", f.take_field("eval_time_sec")?)?;
    let training_time_sec = parse_num("training_time_sec", f.take_field("training_time_sec")?)?;
    let avg_step_time_sec = parse_num("avg_step_time_sec", f.take_field("avg_step_time_sec")?)?;
    let avg_batch_wait_sec = parse_num("avg_batch_wait_sec", f.take_field("avg_batch_wait_sec")?)?;
    let wait_fraction = parse_num("rollout_wait_fraction", f.take_field("rollout_wait_fraction")?)?;
    f.skip_blank();

    f.expect_header("--- Production ---")?;
    let total_raas_gpus = parse_num("total_raas_gpus", f.take_field("total_raas_gpus")?)?;
    let produced = parse_num("produced", f.take_field("produced")?)?;
    let entered = parse_num("entered", f.take_field("entered")?)?;
    let accept_rate = parse_num("accept_rate", f.take_field("  accept_rate")?)?;
    let consumed = parse_num("consumed", f.take_field("consumed")?)?;
    let stale_skipped = parse_num("stale_skipped", f.take_field("stale_skipped")?)?;
    let stale_rate = parse_num("stale_rate", f.take_field("  stale_rate")?)?;
    let throughput_per_gpu = parse_num("throughput_per_gpu", f.take_field("throughput_per_gpu")?)?;
    let produce_consume_ratio =
        parse_num("produce_consume_ratio", f.take_field("produce_consume_ratio")?)?;
    f.skip_blank();

    f.expect_header("--- Scaling decision ---")?;
    let branch = f.take_field("branch")?.to_string();
    let g_target = parse_num("G_target", f.take_field("G_target")?)?;
    let estimated_delta_gpus: i64 = {
        let raw = f.take_field("estimated_delta_gpus")?;
        parse_num("estimated_delta_gpus", raw.strip_prefix('+').unwrap_or(raw))?
    };
    let weight_transfer_active =
        parse_num("weight_transfer_active", f.take_field("weight_transfer_active")?)?;
    f.skip_blank();

    f.expect_header("--- RaaS Instance Layout (last ")?;
    f.expect_header("uid ")?;
    let mut layout = Vec::new();
    loop {
        let line = f
            .lines
            .get(f.pos)
            .ok_or_else(|| bad("layout table not terminated"))?;
        f.pos += 1;
        if line.trim() == "---" {
            break;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 7 {
            return Err(bad(format!("layout row with {} columns: {line:?}", cols.len())));
        }
        let status = match cols[6] {
            "healthy" => InstanceStatus::Healthy,
            "suspect" => InstanceStatus::Suspect,
            other => return Err(bad(format!("unknown instance status {other:?}"))),
        };
        layout.push(LayoutRow {
            uid: cols[0].to_string(),
            gpus: parse_num("layout gpus", cols[1])?,
            produced: parse_num("layout produced", cols[2])?,
            accepted: parse_num("layout accepted", cols[3])?,
            accept_rate: parse_num("layout accept_rate", cols[4])?,
            throughput_per_gpu: parse_num("layout throughput/gpu", cols[5])?,
            status,
        });
    }

    let total_line = f
        .lines
        .get(f.pos)
        .ok_or_else(|| bad("missing totals line"))?;
    let rest = total_line
        .strip_prefix("Total: ")
        .ok_or_else(|| bad(format!("expected totals line, got {total_line:?}")))?;
    let parts: Vec<&str> = rest.split(", ").collect();
    if parts.len() != 4 {
        return Err(bad(format!("totals line with {} parts: {total_line:?}", parts.len())));
    }
    let total_of = |part: &str, suffix: &str| -> Result<u64, ReportParseError> {
        let raw = part
            .strip_suffix(suffix)
            .ok_or_else(|| bad(format!("totals part {part:?} missing {suffix:?}")))?;
        parse_num("totals", raw)
    };

    Ok(ParsedReport {
        window_versions,
        wall_time_sec,
        eval_time_sec,
        training_time_sec,
        avg_step_time_sec,
        avg_batch_wait_sec,
        wait_fraction,
        total_raas_gpus,
        produced,
        entered,
        accept_rate,
        consumed,
        stale_skipped,
        stale_rate,
        throughput_per_gpu,
        produce_consume_ratio,
        branch,
        g_target,
        estimated_delta_gpus,
        weight_transfer_active,
        layout,
        total_instances: total_of(parts[0], " instances")? as usize,
        total_gpus: total_of(parts[1], " GPUs")?,
        total_produced: total_of(parts[2], " produced")?,
        total_accepted: total_of(parts[3], " accepted")?,
    })
}
