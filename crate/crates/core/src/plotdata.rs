//! Plot-ready tables derived from a run trace.
//!
//! | file                  | columns                                          |
//! |-----------------------|--------------------------------------------------|
//! | `fig2_errors.csv`     | `agent,k,e0..e{n-1}`                             |
//! | `fig3_inputs.csv`     | `agent,k,u0..u{m-1}`                             |
//! | `fig4_sync_gap.csv`   | `k,agent_i,agent_j,s_i,s_j,gap` (`i < j`)        |
//! | `fig5_triggers.csv`   | `agent,k,mode,phase` (sampling instants only)    |
//! | `fig6_paths.csv`      | `agent,k,x,y,theta,ref_x,ref_y`                  |
//!
//! The output is a pure function of the trace: rerunning yields identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::trace::{read_agents, AgentTrace};
use crate::{Error, Result};

pub const FIG2: &str = "fig2_errors.csv";
pub const FIG3: &str = "fig3_inputs.csv";
pub const FIG4: &str = "fig4_sync_gap.csv";
pub const FIG5: &str = "fig5_triggers.csv";
pub const FIG6: &str = "fig6_paths.csv";

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write(dir: &Path, name: &str, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(path)
}

fn dims(agents: &[AgentTrace]) -> Result<(usize, usize)> {
    let (n, m) = agents.first().map_or((0, 0), |a| (a.state_dim, a.input_dim));
    if let Some(a) = agents.iter().find(|a| (a.state_dim, a.input_dim) != (n, m)) {
        return Err(Error::Trace(format!(
            "agent {} has dimensions ({}, {}), expected ({n}, {m})",
            a.id, a.state_dim, a.input_dim
        )));
    }
    Ok((n, m))
}

/// Writes the five figure tables into `out_dir` and returns their paths.
pub fn write_figures(agents: &[AgentTrace], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let (n, m) = dims(agents)?;
    let labelled = |prefix: &[&str], var: char, count: usize| -> Vec<String> {
        prefix
            .iter()
            .map(|s| s.to_string())
            .chain((0..count).map(|i| format!("{var}{i}")))
            .collect()
    };
    let per_row = |f: &dyn Fn(&crate::trace::AgentRow) -> Vec<String>| -> Vec<Vec<String>> {
        agents
            .iter()
            .flat_map(|a| a.rows.iter().map(|r| [vec![r.agent.to_string(), r.k.to_string()], f(r)].concat()))
            .collect()
    };

    let mut out = Vec::with_capacity(5);
    out.push(write(
        out_dir,
        FIG2,
        labelled(&["agent", "k"], 'e', n),
        per_row(&|r| r.e.iter().map(|&x| num(x)).collect()),
    )?);
    out.push(write(
        out_dir,
        FIG3,
        labelled(&["agent", "k"], 'u', m),
        per_row(&|r| r.u.iter().map(|&x| num(x)).collect()),
    )?);

    let steps = agents.iter().map(|a| a.rows.len()).min().unwrap_or(0);
    let mut gaps = Vec::new();
    for k in 0..steps {
        for (i, a) in agents.iter().enumerate() {
            for b in &agents[i + 1..] {
                let (si, sj) = (a.rows[k].s, b.rows[k].s);
                gaps.push(vec![
                    a.rows[k].k.to_string(),
                    a.id.to_string(),
                    b.id.to_string(),
                    num(si),
                    num(sj),
                    num((si - sj).abs()),
                ]);
            }
        }
    }
    out.push(write(
        out_dir,
        FIG4,
        ["k", "agent_i", "agent_j", "s_i", "s_j", "gap"].map(String::from).to_vec(),
        gaps,
    )?);

    let triggers = agents
        .iter()
        .flat_map(|a| {
            a.rows
                .iter()
                .filter(|r| r.triggered)
                .map(|r| vec![r.agent.to_string(), r.k.to_string(), r.mode.clone(), r.phase.to_string()])
        })
        .collect();
    out.push(write(
        out_dir,
        FIG5,
        ["agent", "k", "mode", "phase"].map(String::from).to_vec(),
        triggers,
    )?);

    out.push(write(
        out_dir,
        FIG6,
        ["agent", "k", "x", "y", "theta", "ref_x", "ref_y"].map(String::from).to_vec(),
        per_row(&|r| {
            (0..3)
                .map(|i| opt(r.pose.map(|p| p[i])))
                .chain((0..2).map(|i| opt(r.reference.map(|p| p[i]))))
                .collect()
        }),
    )?);
    Ok(out)
}

/// Reads the agent CSVs in `trace_dir` and writes the figure tables.
pub fn from_trace_dir(trace_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    write_figures(&read_agents(trace_dir)?, out_dir)
}
