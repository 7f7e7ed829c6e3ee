//! Browser bindings: controller trace, rule grids and a small paired run.
//! Every export takes and returns JSON text.

use fep_core::slreq::{self, FuzzyGrade, SlReqInput, Table3Orientation};
use fep_core::{Protocol, ScenarioConfig, Simulator};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

pub fn trace_json(input: &str) -> Result<String, String> {
    let input: SlReqInput = serde_json::from_str(input).map_err(|e| format!("bad input: {e}"))?;
    let trace = slreq::trace(&input).map_err(|e| e.to_string())?;
    let out = json!({ "trace": trace, "text": trace.to_string() });
    Ok(out.to_string())
}

pub fn grid_json(orientation: &str) -> Result<String, String> {
    let orientation = match orientation {
        "temp_dominant" => Table3Orientation::TempDominant,
        "as_printed_rows" => Table3Orientation::AsPrintedRows,
        other => return Err(format!("unknown orientation {other:?}")),
    };
    let g = FuzzyGrade::ALL;
    // temp[ph][ccs], slpr[temp][cl]
    let temp: Vec<Vec<String>> = g.iter().map(|&p| g.iter().map(|&c| slreq::combine_temp(p, c).to_string()).collect()).collect();
    let slpr: Vec<Vec<String>> =
        g.iter().map(|&t| g.iter().map(|&c| slreq::combine_slpr(t, c, orientation).to_string()).collect()).collect();
    Ok(json!({ "temp": temp, "slpr": slpr }).to_string())
}

fn scenario(nodes: usize, seed: u64, seconds: f64, protocol: Protocol) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.run.seed = seed;
    cfg.run.protocol = protocol;
    cfg.run.sim_time_s = seconds;
    cfg.nodes.count = nodes;
    cfg.nodes.range_min_m = 100.0;
    cfg.nodes.range_max_m = 100.0;
    cfg.nodes.speed_min_mps = 5.0;
    cfg.nodes.speed_max_mps = 15.0;
    let side = (nodes as f64 / 60.0).sqrt() * 600.0;
    cfg.arena.width_m = side;
    cfg.arena.height_m = side;
    cfg.traffic.sessions = (nodes / 3).max(1);
    cfg.traffic.packets_per_session = 200;
    cfg.traffic.rate_pps = 4.0;
    cfg.traffic.start_max_s = (seconds / 4.0).min(20.0);
    // scale the battery with run length so routers still cross the threshold
    cfg.energy.capacity_j = 7.0 * seconds / 200.0;
    cfg
}

fn one_run(cfg: ScenarioConfig) -> Result<Value, String> {
    let arena = (cfg.arena.width_m, cfg.arena.height_m);
    let end = cfg.run.sim_time_s * 1000.0;
    let mut sim = Simulator::new(cfg).map_err(|e| e.to_string())?;
    while sim.run_until(end) {}
    let positions: Vec<[f64; 2]> = sim.positions().iter().map(|p| [p.x, p.y]).collect();
    let ranges = sim.ranges();
    let out = sim.finish();
    Ok(json!({
        "report": out.report,
        "arena": arena,
        "positions": positions,
        "ranges": ranges,
        "nodes": out.nodes,
    }))
}

pub fn compare_json(nodes: usize, seed: u64, seconds: f64) -> Result<String, String> {
    if !(2..=200).contains(&nodes) || !(1.0..=400.0).contains(&seconds) {
        return Err("nodes must be 2..200 and seconds 1..400".into());
    }
    let baseline = one_run(scenario(nodes, seed, seconds, Protocol::Baseline))?;
    let fep = one_run(scenario(nodes, seed, seconds, Protocol::Fep))?;
    Ok(json!({ "baseline": baseline, "fep": fep }).to_string())
}

/// Controller trace for a JSON `SlReqInput`.
#[wasm_bindgen]
pub fn slreq_trace(input: &str) -> Result<String, JsError> {
    trace_json(input).map_err(|e| JsError::new(&e))
}

/// The temp and SLPR rule grids under `orientation`.
#[wasm_bindgen]
pub fn rule_grid(orientation: &str) -> Result<String, JsError> {
    grid_json(orientation).map_err(|e| JsError::new(&e))
}

/// Baseline and FEP runs of the same desk-style scenario.
#[wasm_bindgen]
pub fn compare_pair(nodes: usize, seed: u64, seconds: f64) -> Result<String, JsError> {
    compare_json(nodes, seed, seconds).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_of_perfect_history_grants_full_nap() {
        let input = r#"{"record":{"s":100,"r":100,"sl":0},"views":[{"alpha1":40,"alpha2":0,"alt_grades":["A4"]}],
            "tau_ab":6.0,"uplink_taus":[2.0,4.0,6.0],"max_sleep_ms":50.0}"#;
        let v: Value = serde_json::from_str(&trace_json(input).unwrap()).unwrap();
        assert_eq!(v["trace"]["slpr"], "A4");
        assert_eq!(v["trace"]["decision"]["duration_ms"], 50.0);
        assert!(trace_json("{}").is_err());
    }

    #[test]
    fn grids_follow_orientation() {
        let a: Value = serde_json::from_str(&grid_json("temp_dominant").unwrap()).unwrap();
        let b: Value = serde_json::from_str(&grid_json("as_printed_rows").unwrap()).unwrap();
        assert_eq!(a["temp"], b["temp"]);
        // temp A4 with cl A1
        assert_eq!(a["slpr"][3][0], "A3");
        assert_eq!(b["slpr"][3][0], "A1");
        assert!(grid_json("diagonal").is_err());
    }

    #[test]
    fn small_pair_runs() {
        let v: Value = serde_json::from_str(&compare_json(12, 3, 20.0).unwrap()).unwrap();
        assert_eq!(v["baseline"]["positions"].as_array().unwrap().len(), 12);
        assert_eq!(v["fep"]["report"]["protocol"], "fep");
        assert!(compare_json(1, 1, 10.0).is_err());
    }
}
