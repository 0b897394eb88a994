//! Text rendering of a saved protocol report. Works on raw JSON so that
//! reports with fields this build does not know about still render.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde_json::Value;

pub fn print(path: &Path) -> anyhow::Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    print!("{}", render(&value));
    Ok(())
}

fn num(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

fn fmt_num(v: &Value) -> String {
    num(v).map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn fmt_list(v: &Value) -> String {
    match v.as_array() {
        Some(items) if !items.is_empty() => {
            let parts: Vec<String> = items.iter().map(fmt_num).collect();
            format!("[{}]", parts.join(", "))
        }
        _ => "none".into(),
    }
}

fn short_hash(v: &Value) -> &str {
    v.as_str().map_or("-", |s| s.get(..12).unwrap_or(s))
}

/// `stages → bound` for one curve.
fn curve_bound(curve: &Value, stages: u64) -> Value {
    curve["points"]
        .as_array()
        .and_then(|ps| ps.iter().find(|p| p["stages"].as_u64() == Some(stages)))
        .map_or(Value::Null, |p| p["bound"].clone())
}

pub fn render(report: &Value) -> String {
    let mut out = String::new();
    let schema = report["schema_version"]
        .as_u64()
        .map_or("?".into(), |v| v.to_string());
    let _ = writeln!(out, "protocol report (schema {schema})");
    let _ = writeln!(
        out,
        "model:            {}",
        report["model"].as_str().unwrap_or("?")
    );
    let config = &report["config"];
    let kernel = config["kernel"]["kind"].as_str().unwrap_or("?");
    let _ = writeln!(
        out,
        "seed:             {}   chains: {}   kernel: {kernel}",
        config["seed"]
            .as_u64()
            .map_or("?".into(), |v| v.to_string()),
        config["chains"]
            .as_u64()
            .map_or("?".into(), |v| v.to_string()),
    );
    let _ = writeln!(
        out,
        "hyperparameters:  real {}, simulated {}",
        fmt_list(&report["eta_real"]),
        fmt_list(&report["eta_simulated"])
    );
    let _ = writeln!(
        out,
        "data hashes:      real {}, simulated {}",
        short_hash(&report["real_data_hash"]),
        short_hash(&report["simulated_data_hash"])
    );
    let start = if report["shared_reverse_start"].as_bool() == Some(true) {
        "one shared exact sample".to_string()
    } else if report["eta_real"].as_array().is_some_and(|a| !a.is_empty()) {
        format!(
            "simulated parameters refreshed for {} steps",
            config["reverse_refresh_steps"]
                .as_u64()
                .map_or("?".into(), |v| v.to_string())
        )
    } else {
        "exact sample".to_string()
    };
    let _ = writeln!(out, "reverse start:    {start}");

    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>8} {:>12} {:>12} {:>10} {:>12} {:>12}",
        "T", "lower", "upper", "gap", "fwd real", "fwd sim"
    );
    for g in report["gaps"]
        .as_array()
        .map(Vec::as_slice)
        .unwrap_or_default()
    {
        let Some(t) = g["stages"].as_u64() else {
            continue;
        };
        let _ = writeln!(
            out,
            "{:>8} {:>12} {:>12} {:>10} {:>12} {:>12}",
            t,
            fmt_num(&g["lower"]),
            fmt_num(&g["upper"]),
            fmt_num(&g["gap"]),
            fmt_num(&curve_bound(&report["forward_real"], t)),
            fmt_num(&curve_bound(&report["forward_simulated"], t)),
        );
    }

    let c = &report["consistency"];
    if c.is_object() {
        let threshold = num(&c["threshold"]).map_or("?".into(), |v| format!("{:.0}%", 100.0 * v));
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "consistency (heuristic): {}, max aligned residual {} nats, allowed {threshold} of the simulated rise ({} nats)",
            c["verdict"].as_str().unwrap_or("?"),
            fmt_num(&c["max_abs_residual"]),
            fmt_num(&c["simulated_rise"]),
        );
    }

    if let Some(study) = report["refresh_study"].as_array() {
        let _ = writeln!(out);
        let _ = writeln!(out, "refresh study (upper bound, mean ± 2 s.e.):");
        for s in study {
            let mean = num(&s["mean"]);
            let se = num(&s["std_err"]);
            let text = match (mean, se) {
                (Some(m), Some(e)) => format!("{m:.4} ± {:.4}", 2.0 * e),
                _ => "-".into(),
            };
            let _ = writeln!(out, "  L = {:>6}: {text}", s["steps"].as_u64().unwrap_or(0));
        }
    }
    out
}
