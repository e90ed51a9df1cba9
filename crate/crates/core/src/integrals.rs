//! FCIDUMP and synthetic-JSON integral files, and the canonical in-memory
//! integral store.
//!
//! Files use 1-based orbital indices; everything in memory is 0-based.
//! Two-electron integrals are stored in chemist notation (pq|rs) with the
//! full 8-fold permutational closure materialized, and an antisymmetrized
//! physicist-notation accessor `<PQ||RS>` over spin orbitals on top.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{is_alpha, spatial_of};

/// One- and two-electron integrals plus the core energy, in Hartree.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralStore {
    pub n_orb: usize,
    pub n_elec: usize,
    pub ms2: i64,
    pub e_core: f64,
    h: Vec<f64>,
    g: Vec<f64>,
}

impl IntegralStore {
    pub fn empty(n_orb: usize, n_elec: usize, ms2: i64) -> Self {
        IntegralStore {
            n_orb,
            n_elec,
            ms2,
            e_core: 0.0,
            h: vec![0.0; n_orb * n_orb],
            g: vec![0.0; n_orb * n_orb * n_orb * n_orb],
        }
    }

    pub fn h(&self, p: usize, q: usize) -> f64 {
        self.h[p * self.n_orb + q]
    }

    /// Chemist-notation (pq|rs).
    pub fn g(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n_orb;
        self.g[((p * n + q) * n + r) * n + s]
    }

    /// Set h_pq = h_qp.
    pub fn set_h(&mut self, p: usize, q: usize, value: f64) {
        self.h[p * self.n_orb + q] = value;
        self.h[q * self.n_orb + p] = value;
    }

    /// Set (pq|rs) and its 8 permutational images.
    pub fn set_g(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) {
        let n = self.n_orb;
        let mut put = |a: usize, b: usize, c: usize, d: usize| {
            self.g[((a * n + b) * n + c) * n + d] = value;
        };
        put(p, q, r, s);
        put(q, p, r, s);
        put(p, q, s, r);
        put(q, p, s, r);
        put(r, s, p, q);
        put(s, r, p, q);
        put(r, s, q, p);
        put(s, r, q, p);
    }

    /// One-body element over spin orbitals (spin-diagonal).
    pub fn so_h(&self, so_p: usize, so_q: usize) -> f64 {
        if is_alpha(so_p) == is_alpha(so_q) {
            self.h(spatial_of(so_p), spatial_of(so_q))
        } else {
            0.0
        }
    }

    /// Antisymmetrized physicist-notation element <PQ||RS> over spin orbitals.
    pub fn so_antisym(&self, so_p: usize, so_q: usize, so_r: usize, so_s: usize) -> f64 {
        let (p, q, r, s) =
            (spatial_of(so_p), spatial_of(so_q), spatial_of(so_r), spatial_of(so_s));
        let coulomb = if is_alpha(so_p) == is_alpha(so_r) && is_alpha(so_q) == is_alpha(so_s) {
            self.g(p, r, q, s)
        } else {
            0.0
        };
        let exchange = if is_alpha(so_p) == is_alpha(so_s) && is_alpha(so_q) == is_alpha(so_r) {
            self.g(p, s, q, r)
        } else {
            0.0
        };
        coulomb - exchange
    }

    pub fn n_alpha(&self) -> Result<usize> {
        let na2 = self.n_elec as i64 + self.ms2;
        if na2 < 0 || na2 % 2 != 0 || na2 / 2 > self.n_elec as i64 {
            return Err(Error::InvalidSector(format!(
                "inconsistent NELEC={} MS2={}",
                self.n_elec, self.ms2
            )));
        }
        Ok((na2 / 2) as usize)
    }

    pub fn n_beta(&self) -> Result<usize> {
        Ok(self.n_elec - self.n_alpha()?)
    }

    /// Max deviation from the 8-fold permutational symmetry of g.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n_orb;
        let mut worst: f64 = 0.0;
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let v = self.g(p, q, r, s);
                        for w in [
                            self.g(q, p, r, s),
                            self.g(p, q, s, r),
                            self.g(r, s, p, q),
                        ] {
                            worst = worst.max((v - w).abs());
                        }
                    }
                }
            }
        }
        worst
    }
}

fn canonical_pair(p: usize, q: usize) -> (usize, usize) {
    if p >= q {
        (p, q)
    } else {
        (q, p)
    }
}

fn pair_index(p: usize, q: usize) -> usize {
    let (a, b) = canonical_pair(p, q);
    a * (a + 1) / 2 + b
}

/// Canonical representative of the 8-fold orbit of (pq|rs).
fn canonical_quad(p: usize, q: usize, r: usize, s: usize) -> (usize, usize, usize, usize) {
    let (a, b) = canonical_pair(p, q);
    let (c, d) = canonical_pair(r, s);
    if pair_index(a, b) >= pair_index(c, d) {
        (a, b, c, d)
    } else {
        (c, d, a, b)
    }
}

// ---------------------------------------------------------------------------
// FCIDUMP
// ---------------------------------------------------------------------------

struct HeaderFields {
    norb: Option<usize>,
    nelec: Option<usize>,
    ms2: i64,
}

fn parse_header(text: &str) -> Result<(HeaderFields, usize)> {
    // Fortran namelist: &FCI KEY=V,KEY=V,... terminated by &END or /.
    // The header may span several lines; values may carry trailing commas.
    let mut fields = HeaderFields { norb: None, nelec: None, ms2: 0 };
    let mut consumed_lines = 0;
    let mut header = String::new();
    let mut terminated = false;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if i == 0 && !t.starts_with('&') {
            return Err(Error::Header("expected namelist starting with '&'".into()));
        }
        header.push(' ');
        header.push_str(t);
        consumed_lines = i + 1;
        if t.ends_with("&END") || t.ends_with("&end") || t.ends_with('/') {
            terminated = true;
            break;
        }
    }
    if !terminated {
        return Err(Error::Header("namelist not terminated by &END or /".into()));
    }
    let header = header
        .trim_start()
        .trim_start_matches("&FCI")
        .trim_start_matches("&fci")
        .trim_end_matches("&END")
        .trim_end_matches("&end")
        .trim_end_matches('/')
        .to_string();
    // Split on commas, then on '=',; ORBSYM-style lists produce bare tokens
    // that we skip once their key has been seen.
    let mut current_key = String::new();
    for tok in header.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        if let Some((k, v)) = tok.split_once('=') {
            current_key = k.trim().to_uppercase();
            let v = v.trim();
            match current_key.as_str() {
                "NORB" => {
                    fields.norb = Some(v.parse().map_err(|_| {
                        Error::Header(format!("invalid NORB value '{v}'"))
                    })?)
                }
                "NELEC" => {
                    fields.nelec = Some(v.parse().map_err(|_| {
                        Error::Header(format!("invalid NELEC value '{v}'"))
                    })?)
                }
                "MS2" => {
                    fields.ms2 = v.parse().map_err(|_| {
                        Error::Header(format!("invalid MS2 value '{v}'"))
                    })?
                }
                // ORBSYM, ISYM and any other keys are accepted and ignored.
                _ => {}
            }
        } else if current_key.is_empty() {
            return Err(Error::Header(format!("stray token '{tok}' before any key")));
        }
        // bare continuation token of a list-valued key: ignore
    }
    Ok((fields, consumed_lines))
}

/// Parse an FCIDUMP text into an [`IntegralStore`].
pub fn parse_fcidump(text: &str) -> Result<IntegralStore> {
    let (fields, header_lines) = parse_header(text)?;
    let n_orb = fields.norb.ok_or_else(|| Error::Header("missing NORB".into()))?;
    let n_elec = fields.nelec.ok_or_else(|| Error::Header("missing NELEC".into()))?;
    if n_orb == 0 || n_orb > 32 {
        return Err(Error::Header(format!("NORB={n_orb} outside supported range 1..=32")));
    }
    let mut store = IntegralStore::empty(n_orb, n_elec, fields.ms2);

    const DUP_TOL: f64 = 1e-10;
    let mut seen_g: std::collections::HashMap<(usize, usize, usize, usize), f64> =
        std::collections::HashMap::new();
    let mut seen_h: std::collections::HashMap<(usize, usize), f64> =
        std::collections::HashMap::new();
    let mut seen_core: Option<f64> = None;

    for (offset, line) in text.lines().enumerate().skip(header_lines) {
        let lineno = offset + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let mut parts = t.split_whitespace();
        let value_tok = parts.next().unwrap();
        let value: f64 = value_tok
            .replace(['D', 'd'], "E")
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("bad value '{value_tok}'") })?;
        let idx: Vec<i64> = parts
            .map(|s| {
                s.parse::<i64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad index '{s}'"),
                })
            })
            .collect::<Result<_>>()?;
        if idx.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 indices, found {}", idx.len()),
            });
        }
        if idx.iter().any(|&i| i < 0 || i as usize > n_orb) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("index out of range 0..={n_orb}: {idx:?}"),
            });
        }
        let (i, j, k, l) = (idx[0] as usize, idx[1] as usize, idx[2] as usize, idx[3] as usize);
        match (i, j, k, l) {
            (0, 0, 0, 0) => {
                if let Some(prev) = seen_core {
                    if (prev - value).abs() > DUP_TOL {
                        return Err(Error::Consistency {
                            line: lineno,
                            msg: format!("core energy {prev} vs {value}"),
                        });
                    }
                }
                seen_core = Some(value);
                store.e_core = value;
            }
            (i, j, 0, 0) if i > 0 && j > 0 => {
                let key = canonical_pair(i - 1, j - 1);
                if let Some(prev) = seen_h.get(&key) {
                    if (prev - value).abs() > DUP_TOL {
                        return Err(Error::Consistency {
                            line: lineno,
                            msg: format!("h({i},{j}) = {prev} vs {value}"),
                        });
                    }
                }
                seen_h.insert(key, value);
                store.set_h(i - 1, j - 1, value);
            }
            (i, 0, 0, 0) if i > 0 => {
                // Orbital-energy record: accepted and ignored.
            }
            (i, j, k, l) if i > 0 && j > 0 && k > 0 && l > 0 => {
                let key = canonical_quad(i - 1, j - 1, k - 1, l - 1);
                if let Some(prev) = seen_g.get(&key) {
                    if (prev - value).abs() > DUP_TOL {
                        return Err(Error::Consistency {
                            line: lineno,
                            msg: format!("g({i},{j},{k},{l}) = {prev} vs {value}"),
                        });
                    }
                }
                seen_g.insert(key, value);
                store.set_g(i - 1, j - 1, k - 1, l - 1, value);
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unrecognized index pattern {idx:?}"),
                });
            }
        }
    }
    Ok(store)
}

/// Serialize a store as FCIDUMP text. Only symmetry-unique nonzero g entries
/// and lower-triangle nonzero h entries are emitted, in a fixed order, so the
/// output is byte-stable for a given store.
pub fn serialize_fcidump(store: &IntegralStore) -> String {
    let n = store.n_orb;
    let mut out = String::new();
    out.push_str(&format!("&FCI NORB={},NELEC={},MS2={},\n", n, store.n_elec, store.ms2));
    out.push_str(" ORBSYM=");
    for _ in 0..n {
        out.push_str("1,");
    }
    out.push('\n');
    out.push_str(" ISYM=1,\n");
    out.push_str("&END\n");
    let fmt = |v: f64| format!("{v:.16E}");
    for p in 0..n {
        for q in 0..=p {
            for r in 0..=p {
                for s in 0..=r {
                    if pair_index(r, s) > pair_index(p, q) {
                        continue;
                    }
                    let v = store.g(p, q, r, s);
                    if v != 0.0 {
                        out.push_str(&format!(
                            "{} {} {} {} {}\n",
                            fmt(v),
                            p + 1,
                            q + 1,
                            r + 1,
                            s + 1
                        ));
                    }
                }
            }
        }
    }
    for p in 0..n {
        for q in 0..=p {
            let v = store.h(p, q);
            if v != 0.0 {
                out.push_str(&format!("{} {} {} 0 0\n", fmt(v), p + 1, q + 1));
            }
        }
    }
    out.push_str(&format!("{} 0 0 0 0\n", fmt(store.e_core)));
    out
}

// ---------------------------------------------------------------------------
// Synthetic JSON format
// ---------------------------------------------------------------------------

/// Dense JSON Hamiltonian: `{n_orb, n_elec, ms2, e_core, h:[[..]], g:[[[[..]]]]}`.
#[derive(Debug, Serialize, Deserialize)]
struct SyntheticFile {
    n_orb: usize,
    n_elec: usize,
    ms2: i64,
    e_core: f64,
    h: Vec<Vec<f64>>,
    g: Vec<Vec<Vec<Vec<f64>>>>,
}

const SYMMETRY_TOL: f64 = 1e-8;

/// Parse the synthetic JSON Hamiltonian format.
pub fn parse_synthetic(text: &str) -> Result<IntegralStore> {
    let file: SyntheticFile = serde_json::from_str(text)?;
    let n = file.n_orb;
    if n == 0 || n > 32 {
        return Err(Error::Shape(format!("n_orb={n} outside supported range 1..=32")));
    }
    if file.h.len() != n || file.h.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!("h must be {n}x{n}")));
    }
    let g_shape_ok = file.g.len() == n
        && file.g.iter().all(|a| {
            a.len() == n
                && a.iter().all(|b| b.len() == n && b.iter().all(|c| c.len() == n))
        });
    if !g_shape_ok {
        return Err(Error::Shape(format!("g must be {n}x{n}x{n}x{n}")));
    }
    let mut store = IntegralStore::empty(n, file.n_elec, file.ms2);
    store.e_core = file.e_core;
    for p in 0..n {
        for q in 0..=p {
            if (file.h[p][q] - file.h[q][p]).abs() > SYMMETRY_TOL {
                return Err(Error::Shape(format!(
                    "h not symmetric at ({p},{q}): {} vs {}",
                    file.h[p][q], file.h[q][p]
                )));
            }
            store.set_h(p, q, file.h[p][q]);
        }
    }
    for p in 0..n {
        for q in 0..=p {
            for r in 0..n {
                for s in 0..=r {
                    if pair_index(r, s) > pair_index(p, q) {
                        continue;
                    }
                    let rep = file.g[p][q][r][s];
                    let images = [
                        file.g[q][p][r][s],
                        file.g[p][q][s][r],
                        file.g[q][p][s][r],
                        file.g[r][s][p][q],
                        file.g[s][r][p][q],
                        file.g[r][s][q][p],
                        file.g[s][r][q][p],
                    ];
                    if images.iter().any(|v| (v - rep).abs() > SYMMETRY_TOL) {
                        return Err(Error::Shape(format!(
                            "g breaks 8-fold symmetry at ({p},{q},{r},{s})"
                        )));
                    }
                    store.set_g(p, q, r, s, rep);
                }
            }
        }
    }
    Ok(store)
}

/// Serialize a store into the synthetic JSON Hamiltonian format.
pub fn serialize_synthetic(store: &IntegralStore) -> String {
    let n = store.n_orb;
    let h: Vec<Vec<f64>> = (0..n).map(|p| (0..n).map(|q| store.h(p, q)).collect()).collect();
    let g: Vec<Vec<Vec<Vec<f64>>>> = (0..n)
        .map(|p| {
            (0..n)
                .map(|q| {
                    (0..n)
                        .map(|r| (0..n).map(|s| store.g(p, q, r, s)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let file = SyntheticFile {
        n_orb: n,
        n_elec: store.n_elec,
        ms2: store.ms2,
        e_core: store.e_core,
        h,
        g,
    };
    serde_json::to_string_pretty(&file).expect("synthetic serialization cannot fail")
}
