use std::fmt::Write as _;

use super::LdpcError;
use crate::bits::BitString;

/// Edge-perspective degree distributions `lambda(x)` and `rho(x)`: each entry
/// is `(degree, fraction of edges attached to nodes of that degree)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    pub variable_degrees: Vec<(usize, f64)>,
    pub check_degrees: Vec<(usize, f64)>,
}

impl DegreeDistribution {
    pub fn regular(variable_degree: usize, check_degree: usize) -> Self {
        Self { variable_degrees: vec![(variable_degree, 1.0)], check_degrees: vec![(check_degree, 1.0)] }
    }

    /// The built-in rate-1/2 profile.
    pub fn default_rate_half() -> Self {
        Self::regular(3, 6)
    }

    pub fn validate(&self) -> Result<(), LdpcError> {
        for (side, list) in [("variable", &self.variable_degrees), ("check", &self.check_degrees)] {
            if list.is_empty() {
                return Err(LdpcError::BadDistribution(format!("{side} side is empty")));
            }
            let mut sum = 0.0;
            for &(d, f) in list {
                if d < 1 {
                    return Err(LdpcError::BadDistribution(format!("{side} degree {d} < 1")));
                }
                if !(f >= 0.0 && f.is_finite()) {
                    return Err(LdpcError::BadDistribution(format!("{side} fraction {f} for degree {d}")));
                }
                sum += f;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(LdpcError::BadDistribution(format!("{side} fractions sum to {sum}")));
            }
        }
        Ok(())
    }

    /// `1 - (sum rho_d / d) / (sum lambda_d / d)`.
    pub fn design_rate(&self) -> f64 {
        let inv = |l: &[(usize, f64)]| l.iter().map(|&(d, f)| f / d as f64).sum::<f64>();
        1.0 - inv(&self.check_degrees) / inv(&self.variable_degrees)
    }

    /// Parses `"3:1"` / `"2:0.25,3:0.75"` style lists into one side.
    pub fn parse_side(text: &str) -> Result<Vec<(usize, f64)>, LdpcError> {
        text.split(',')
            .map(|item| {
                let (d, f) = item
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| LdpcError::BadDistribution(format!("expected degree:fraction, got `{item}`")))?;
                let d = d.trim().parse().map_err(|_| LdpcError::BadDistribution(format!("bad degree `{d}`")))?;
                let f = f.trim().parse().map_err(|_| LdpcError::BadDistribution(format!("bad fraction `{f}`")))?;
                Ok((d, f))
            })
            .collect()
    }

    pub fn format_side(side: &[(usize, f64)]) -> String {
        side.iter().map(|(d, f)| format!("{d}:{f}")).collect::<Vec<_>>().join(",")
    }

    /// Node degrees for `count` nodes of one side.
    ///
    /// Node fractions are `(f_d / d) / sum(f_i / i)`. Counts are floored and the
    /// remainder goes to the largest fractional parts, ties to the lower degree.
    /// The result is sorted ascending.
    pub(crate) fn node_degrees(side: &[(usize, f64)], count: usize) -> Vec<usize> {
        let total: f64 = side.iter().map(|&(d, f)| f / d as f64).sum();
        let mut entries: Vec<(usize, usize, f64)> = side
            .iter()
            .map(|&(d, f)| {
                let ideal = count as f64 * (f / d as f64) / total;
                (d, ideal.floor() as usize, ideal - ideal.floor())
            })
            .collect();
        let assigned: usize = entries.iter().map(|e| e.1).sum();
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| entries[b].2.total_cmp(&entries[a].2).then(entries[a].0.cmp(&entries[b].0)));
        for &k in order.iter().cycle().take(count.saturating_sub(assigned)) {
            entries[k].1 += 1;
        }
        entries.sort_by_key(|e| e.0);
        entries.iter().flat_map(|&(d, c, _)| std::iter::repeat_n(d, c)).collect()
    }
}

/// Parity-check matrix in row/column adjacency form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseParityMatrix {
    n_cols: usize,
    rows: Vec<Vec<u32>>,
    cols: Vec<Vec<u32>>,
    code_rate: f64,
    /// Construction parameters, written to the matrix file header.
    pub seed: u64,
    pub distribution: Option<DegreeDistribution>,
}

impl SparseParityMatrix {
    /// Builds from row adjacency lists; each row is sorted and must not
    /// repeat a column.
    pub fn from_rows(n_cols: usize, mut rows: Vec<Vec<u32>>, code_rate: f64) -> Result<Self, LdpcError> {
        let mut cols = vec![Vec::new(); n_cols];
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(LdpcError::BadParameters(format!("row {r} repeats a column")));
            }
            for &c in row.iter() {
                let c = c as usize;
                if c >= n_cols {
                    return Err(LdpcError::BadParameters(format!("row {r} references column {c} >= {n_cols}")));
                }
                cols[c].push(r as u32);
            }
        }
        Ok(Self { n_cols, rows, cols, code_rate, seed: 0, distribution: None })
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn code_rate(&self) -> f64 {
        self.code_rate
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn col(&self, c: usize) -> &[u32] {
        &self.cols[c]
    }

    pub fn n_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row_weights(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn col_weights(&self) -> Vec<usize> {
        self.cols.iter().map(Vec::len).collect()
    }

    /// True when two rows share two or more columns.
    pub fn has_four_cycle(&self) -> bool {
        let mut seen = vec![u32::MAX; self.rows.len()];
        for (r, row) in self.rows.iter().enumerate() {
            let r = r as u32;
            for &c in row {
                for &other in &self.cols[c as usize] {
                    if other == r {
                        continue;
                    }
                    if seen[other as usize] == r {
                        return true;
                    }
                    seen[other as usize] = r;
                }
            }
        }
        false
    }

    /// Text format:
    ///
    /// ```text
    /// n_cols <N>
    /// n_rows <M>
    /// rate <R_c>
    /// seed <u64>
    /// distribution variable=<d:f,...> check=<d:f,...>   (or `distribution none`)
    /// <sorted column indices of row 0, space separated>
    /// ...
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_cols {}", self.n_cols);
        let _ = writeln!(out, "n_rows {}", self.n_rows());
        let _ = writeln!(out, "rate {}", self.code_rate);
        let _ = writeln!(out, "seed {}", self.seed);
        match &self.distribution {
            Some(d) => {
                let _ = writeln!(
                    out,
                    "distribution variable={} check={}",
                    DegreeDistribution::format_side(&d.variable_degrees),
                    DegreeDistribution::format_side(&d.check_degrees)
                );
            }
            None => out.push_str("distribution none\n"),
        }
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LdpcError> {
        let fmt = |m: String| LdpcError::Format(m);
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String, LdpcError> {
            let line = lines.next().ok_or_else(|| fmt(format!("missing `{key}` header")))?;
            let (k, v) = line.split_once(' ').ok_or_else(|| fmt(format!("malformed header line `{line}`")))?;
            if k != key {
                return Err(fmt(format!("expected `{key}`, found `{k}`")));
            }
            Ok(v.trim().to_string())
        };
        let n_cols: usize = header("n_cols")?.parse().map_err(|e| fmt(format!("n_cols: {e}")))?;
        let n_rows: usize = header("n_rows")?.parse().map_err(|e| fmt(format!("n_rows: {e}")))?;
        let rate: f64 = header("rate")?.parse().map_err(|e| fmt(format!("rate: {e}")))?;
        let seed: u64 = header("seed")?.parse().map_err(|e| fmt(format!("seed: {e}")))?;
        let dist_text = header("distribution")?;
        let distribution = if dist_text == "none" {
            None
        } else {
            let mut var = None;
            let mut chk = None;
            for part in dist_text.split_whitespace() {
                match part.split_once('=') {
                    Some(("variable", v)) => var = Some(DegreeDistribution::parse_side(v)?),
                    Some(("check", v)) => chk = Some(DegreeDistribution::parse_side(v)?),
                    _ => return Err(fmt(format!("bad distribution field `{part}`"))),
                }
            }
            match (var, chk) {
                (Some(v), Some(c)) => Some(DegreeDistribution { variable_degrees: v, check_degrees: c }),
                _ => return Err(fmt("distribution needs variable= and check=".into())),
            }
        };
        let rows: Vec<Vec<u32>> = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|t| t.parse::<u32>().map_err(|e| fmt(format!("column index `{t}`: {e}"))))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        if rows.len() != n_rows {
            return Err(fmt(format!("header says {n_rows} rows, found {}", rows.len())));
        }
        let mut h = Self::from_rows(n_cols, rows, rate)?;
        h.seed = seed;
        h.distribution = distribution;
        Ok(h)
    }
}

/// `H * x` over GF(2).
pub fn syndrome(h: &SparseParityMatrix, x: &BitString) -> Result<BitString, LdpcError> {
    if x.len() != h.n_cols {
        return Err(LdpcError::Dimension { what: "input", got: x.len(), expected: h.n_cols });
    }
    Ok(BitString::from_bools(
        h.rows.iter().map(|row| row.iter().fold(false, |acc, &c| acc ^ x.bit(c as usize))),
    ))
}
