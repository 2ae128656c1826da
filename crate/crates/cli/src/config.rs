//! Scenario configuration: a flat `key = value` file with one `[section]`
//! per concern. Unknown sections/keys and malformed values are reported
//! with their line numbers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sale_core::sale::RunConfig;
use sale_core::simnet::{FrameConfig, ReceptionModel};
use sale_core::topology::InterferenceGraph;

/// Value plus the line it was defined on, for diagnostics.
type Section = BTreeMap<String, (String, usize)>;

/// Minimal INI reader: `[section]` headers, `key = value` pairs, `#`
/// comments. Duplicate keys overwrite (last one wins).
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current = String::from("scenario");
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("line {lineno}: unterminated section header '{raw}'"))?
                .trim();
            if name.is_empty() {
                bail!("line {lineno}: empty section name");
            }
            current = name.to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {lineno}: expected 'key = value', got '{line}'"))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("line {lineno}: empty key");
        }
        sections
            .entry(current.clone())
            .or_default()
            .insert(key.to_string(), (value.trim().to_string(), lineno));
    }
    Ok(sections)
}

fn take<T: FromStr>(section: &mut Section, key: &str, into: &mut T) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some((value, line)) = section.remove(key) {
        *into = value
            .parse()
            .map_err(|e| anyhow!("line {line}: invalid value for '{key}': {e}"))?;
    }
    Ok(())
}

fn reject_leftovers(name: &str, section: &Section) -> Result<()> {
    if let Some((key, (_, line))) = section.iter().next() {
        bail!("line {line}: unknown key '{key}' in section [{name}]");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ideal,
    Packet,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "ideal" => Ok(Mode::Ideal),
            "packet" => Ok(Mode::Packet),
            other => Err(format!("unknown mode '{other}' (expected ideal|packet)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TopologySource {
    Builtin(String),
    File(PathBuf),
    Random {
        n: usize,
        area: f64,
        range: f64,
        seed: u64,
    },
}

/// One experiment: a topology, a mode, and the run/frame parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: TopologySource,
    pub mode: Mode,
    /// The run is expected *not* to converge (e.g. deliberately unstable
    /// gains); flips the exit-status convention.
    pub expect_divergence: bool,
    pub run: RunConfig,
    pub frame: FrameConfig,
    /// Tolerance/window for the reported convergence-time metric.
    pub metrics_tol: f64,
    pub metrics_window: usize,
}

impl Scenario {
    pub fn from_ini(text: &str) -> Result<Scenario> {
        let mut sections = parse_ini(text)?;

        let mut scenario = sections.remove("scenario").unwrap_or_default();
        let mut topology_spec = String::from("fig3");
        let mut mode = Mode::Ideal;
        let mut expect_divergence = false;
        take(&mut scenario, "topology", &mut topology_spec)?;
        take(&mut scenario, "mode", &mut mode)?;
        take(&mut scenario, "expect_divergence", &mut expect_divergence)?;
        reject_leftovers("scenario", &scenario)?;

        let mut topo = sections.remove("topology").unwrap_or_default();
        let (mut n, mut area, mut range, mut topo_seed) = (50usize, 500.0f64, 5.0f64, 1u64);
        take(&mut topo, "n", &mut n)?;
        take(&mut topo, "area", &mut area)?;
        take(&mut topo, "range", &mut range)?;
        take(&mut topo, "seed", &mut topo_seed)?;
        reject_leftovers("topology", &topo)?;

        let topology = match topology_spec.as_str() {
            "fig1" | "fig3" | "fig5" => TopologySource::Builtin(topology_spec),
            "random" => TopologySource::Random {
                n,
                area,
                range,
                seed: topo_seed,
            },
            spec => match spec.strip_prefix("file:") {
                Some(path) => TopologySource::File(PathBuf::from(path)),
                None => {
                    bail!("unknown topology '{spec}' (expected fig1|fig3|fig5|random|file:<path>)")
                }
            },
        };

        // packet runs need a looser termination tolerance than ideal ones
        let mut run = RunConfig::default();
        let mut metrics_tol = 1e-3;
        if mode == Mode::Packet {
            run.tol = 0.01;
            run.max_iter = 300;
            metrics_tol = 0.05;
        }
        let mut run_section = sections.remove("run").unwrap_or_default();
        take(&mut run_section, "q_init", &mut run.q_init)?;
        take(&mut run_section, "tol", &mut run.tol)?;
        take(&mut run_section, "window", &mut run.window)?;
        take(&mut run_section, "max_iter", &mut run.max_iter)?;
        take(
            &mut run_section,
            "gain_multiplier",
            &mut run.gain_multiplier,
        )?;
        let mut metrics_window = 5usize;
        take(&mut run_section, "metrics_tol", &mut metrics_tol)?;
        take(&mut run_section, "metrics_window", &mut metrics_window)?;
        reject_leftovers("run", &run_section)?;

        let mut frame = FrameConfig::default();
        let mut frame_section = sections.remove("frame").unwrap_or_default();
        take(&mut frame_section, "l_f", &mut frame.l_f)?;
        take(&mut frame_section, "l_nd", &mut frame.l_nd)?;
        take(&mut frame_section, "l_s", &mut frame.l_s)?;
        take(&mut frame_section, "r_b", &mut frame.r_b)?;
        take(&mut frame_section, "seed", &mut frame.seed)?;
        let mut reception = String::from("collision");
        take(&mut frame_section, "reception", &mut reception)?;
        frame.reception = match reception.as_str() {
            "collision" => ReceptionModel::Collision,
            "perfect" => ReceptionModel::Perfect,
            other => bail!("unknown reception model '{other}' (expected collision|perfect)"),
        };
        reject_leftovers("frame", &frame_section)?;

        if let Some((name, section)) = sections.iter().next() {
            if let Some((_, (_, line))) = section.iter().next() {
                bail!("line {line}: unknown section [{name}]");
            }
            bail!("unknown section [{name}]");
        }

        Ok(Scenario {
            topology,
            mode,
            expect_divergence,
            run,
            frame,
            metrics_tol,
            metrics_window,
        })
    }

    pub fn build_graph(&self) -> Result<InterferenceGraph> {
        match &self.topology {
            TopologySource::Builtin(name) => Ok(match name.as_str() {
                "fig1" => sale_core::topology::fig1(),
                "fig3" => sale_core::topology::fig3(),
                "fig5" => sale_core::topology::fig5(),
                other => bail!("unknown builtin topology '{other}'"),
            }),
            TopologySource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading topology file {}", path.display()))?;
                InterferenceGraph::parse(&text)
                    .with_context(|| format!("parsing topology file {}", path.display()))
            }
            TopologySource::Random {
                n,
                area,
                range,
                seed,
            } => Ok(InterferenceGraph::random_geometric(
                *n, *area, *range, *seed,
            )?),
        }
    }
}
