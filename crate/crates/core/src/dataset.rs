//! JSON-lines dataset files: one header line, then one row per instance.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_instance, NetworkInstance, SystemParams};
use crate::error::{Error, Result};
use crate::opt::{solve_opt, SolverConfig};
use crate::physics::{evaluate, schedule_length, Schedule};

pub const FORMAT: &str = "wpcn-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// RNG stream the rows were drawn from, so splits sharing a seed differ.
    pub stream: u64,
    pub n_users: usize,
    pub params: SystemParams,
    /// Free-form provenance, e.g. the experiment config.
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// OPT schedule attached to a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub tau0: f64,
    pub tau: Vec<f64>,
    pub p: Vec<f64>,
    pub length: f64,
}

impl Label {
    pub fn from_schedule(s: &Schedule) -> Self {
        Self {
            tau0: s.eh_s,
            tau: s.it_s.clone(),
            p: s.power_w.clone(),
            length: schedule_length(s),
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            eh_s: self.tau0,
            it_s: self.tau.clone(),
            power_w: self.p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: u64,
    pub n: usize,
    pub gain_up: Vec<f64>,
    pub gain_dn: Vec<f64>,
    pub dist_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Row {
    pub fn new(id: u64, inst: &NetworkInstance) -> Self {
        Self {
            id,
            n: inst.n_users(),
            gain_up: inst.gain_up.clone(),
            gain_dn: inst.gain_dn.clone(),
            dist_m: inst.dist_m.clone(),
            label: None,
        }
    }

    pub fn instance(&self) -> Result<NetworkInstance> {
        let inst = NetworkInstance {
            gain_up: self.gain_up.clone(),
            gain_dn: self.gain_dn.clone(),
            dist_m: self.dist_m.clone(),
        };
        inst.validate()?;
        if inst.n_users() != self.n {
            return Err(Error::Shape {
                expected: self.n,
                got: inst.n_users(),
            });
        }
        Ok(inst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Header,
    pub rows: Vec<Row>,
}

impl Dataset {
    /// `count` instances with `n_users` users drawn from `(seed, stream)`.
    pub fn generate(
        n_users: usize,
        count: usize,
        params: &SystemParams,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        params.validate()?;
        if count == 0 {
            return Err(Error::Domain("dataset needs at least one instance".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let rows = (0..count as u64)
            .map(|id| generate_instance(n_users, params, &mut rng).map(|inst| Row::new(id, &inst)))
            .collect::<Result<Vec<_>>>()?;
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            seed,
            stream,
            n_users,
            params: *params,
            meta: serde_json::Value::Null,
        };
        Ok(Self { header, rows })
    }

    pub fn n_users(&self) -> usize {
        self.header.n_users
    }

    pub fn params(&self) -> &SystemParams {
        &self.header.params
    }

    pub fn is_labeled(&self) -> bool {
        self.rows.iter().all(|r| r.label.is_some())
    }

    pub fn instances(&self) -> Result<Vec<NetworkInstance>> {
        self.rows.iter().map(Row::instance).collect()
    }

    /// Instances with their OPT schedules; fails on the first unlabeled row.
    pub fn labeled(&self) -> Result<Vec<(NetworkInstance, Schedule)>> {
        self.rows
            .iter()
            .map(|r| {
                let label = r
                    .label
                    .as_ref()
                    .ok_or_else(|| Error::Domain(format!("row {} has no label", r.id)))?;
                Ok((r.instance()?, label.schedule()))
            })
            .collect()
    }

    /// Attaches OPT labels to every unlabeled row. Returns how many rows were
    /// labeled; rows that already carry a label are left untouched.
    pub fn label(&mut self, cfg: &SolverConfig) -> Result<usize> {
        let params = self.header.params;
        let demand = vec![params.demand_bits; self.n_users()];
        let todo: Vec<usize> = (0..self.rows.len())
            .filter(|&k| self.rows[k].label.is_none())
            .collect();
        let labels = todo
            .par_iter()
            .map(|&k| {
                let row = &self.rows[k];
                let fail = |e: Error| Error::Domain(format!("row {}: {e}", row.id));
                let inst = row.instance().map_err(fail)?;
                let s = solve_opt(&inst, &params, cfg).map_err(fail)?;
                let rep = evaluate(&s, &inst, &params, &demand).map_err(fail)?;
                if !rep.is_feasible(&params) {
                    return Err(Error::Infeasible(format!(
                        "row {}: OPT label fails validation",
                        row.id
                    )));
                }
                Ok(Label::from_schedule(&s))
            })
            .collect::<Result<Vec<_>>>()?;
        for (&k, l) in todo.iter().zip(labels) {
            self.rows[k].label = Some(l);
        }
        Ok(todo.len())
    }

    /// Ids of labeled rows whose label does not pass feasibility validation.
    pub fn invalid_labels(&self) -> Result<Vec<u64>> {
        let params = self.header.params;
        let demand = vec![params.demand_bits; self.n_users()];
        let mut bad = Vec::new();
        for row in &self.rows {
            if let Some(l) = &row.label {
                let ok = evaluate(&l.schedule(), &row.instance()?, &params, &demand)
                    .is_ok_and(|r| r.is_feasible(&params));
                if !ok {
                    bad.push(row.id);
                }
            }
        }
        Ok(bad)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse errors carry the 1-based line number.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })??;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            row.instance().map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            if row.n != header.n_users {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("row has {} users, header says {}", row.n, header.n_users),
                });
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
