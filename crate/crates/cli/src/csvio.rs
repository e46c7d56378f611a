//! Trajectory / extremal interchange files.
//!
//! Plain CSV with header `k,x1..xn[,u1..ur][,psi0,psi1..psin]`. Rows run
//! over ascending state indices `k = M ..= M+N`; the control cells are
//! empty on the final row and the co-state cells (including `psi0`, which
//! is constant and repeated) are empty on the first. Floats are written
//! with 17 significant digits, so a read-back is bit-exact.

use std::fmt::Write as _;

use noether_dt_core::model::{Extremal, Trajectory};

use crate::config::ConfigError;

fn fail(message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        message: message.into(),
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render an extremal in interchange form.
pub fn write_extremal(e: &Extremal) -> String {
    let t = &e.trajectory;
    let n = t.x[0].len();
    let r = t.u[0].len();
    let mut out = String::new();
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=r).map(|i| format!("u{i}")));
    header.push("psi0".into());
    header.extend((1..=n).map(|i| format!("psi{i}")));
    writeln!(out, "{}", header.join(",")).unwrap();
    for k in t.first..=t.last() {
        let mut cells = vec![k.to_string()];
        cells.extend(t.state(k).iter().map(|&v| format_float(v)));
        if k < t.last() {
            cells.extend(t.control(k).iter().map(|&v| format_float(v)));
        } else {
            cells.extend((0..r).map(|_| String::new()));
        }
        if k > t.first {
            cells.push(format_float(e.psi0));
            cells.extend(e.costate(k).iter().map(|&v| format_float(v)));
        } else {
            cells.extend((0..=n).map(|_| String::new()));
        }
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

struct Table {
    header: Vec<String>,
    rows: Vec<(i64, Vec<Option<f64>>)>,
}

fn parse_table(text: &str) -> Result<Table, ConfigError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or_else(|| fail("empty CSV file"))?;
    let header: Vec<String> = header_line
        .split(',')
        .map(|h| h.trim().to_owned())
        .collect();
    if header.first().map(String::as_str) != Some("k") {
        return Err(fail("CSV header must start with `k`"));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != header.len() {
            return Err(ConfigError {
                line: Some(idx + 1),
                message: format!("row has {} cells, header has {}", cells.len(), header.len()),
            });
        }
        let k: i64 = cells[0].parse().map_err(|_| ConfigError {
            line: Some(idx + 1),
            message: format!("`{}` is not an integer stage index", cells[0]),
        })?;
        let values: Vec<Option<f64>> = cells[1..]
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| ConfigError {
                        line: Some(idx + 1),
                        message: format!("`{c}` is not a number"),
                    })
                }
            })
            .collect::<Result<_, _>>()?;
        rows.push((k, values));
    }
    if rows.is_empty() {
        return Err(fail("CSV file has a header but no data rows"));
    }
    rows.sort_by_key(|(k, _)| *k);
    Ok(Table { header, rows })
}

fn columns(table: &Table, prefix: &str) -> Vec<usize> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (pos, name) in table.header.iter().enumerate().skip(1) {
        if let Some(idx) = name.strip_prefix(prefix) {
            if let Ok(i) = idx.parse::<usize>() {
                if i >= 1 {
                    found.push((i, pos - 1)); // value index within the row
                }
            }
        }
    }
    found.sort();
    found.into_iter().map(|(_, pos)| pos).collect()
}

/// Read a full extremal (states, controls, psi0, co-states).
pub fn read_extremal(
    text: &str,
    state_dim: usize,
    control_dim: usize,
    first: i64,
    periods: usize,
) -> Result<Extremal, ConfigError> {
    let table = parse_table(text)?;
    let x_cols = columns(&table, "x");
    let u_cols = columns(&table, "u");
    let psi_cols = columns(&table, "psi");
    // `psi0` matches the "psi" prefix with index 0 and is filtered out by
    // the >= 1 rule; find it directly.
    let psi0_col = table
        .header
        .iter()
        .position(|h| h == "psi0")
        .map(|pos| pos - 1);
    if x_cols.len() != state_dim {
        return Err(fail(format!(
            "CSV has {} state columns, expected {state_dim}",
            x_cols.len()
        )));
    }
    if u_cols.len() != control_dim {
        return Err(fail(format!(
            "CSV has {} control columns, expected {control_dim}",
            u_cols.len()
        )));
    }
    if psi_cols.len() != state_dim {
        return Err(fail(format!(
            "CSV has {} co-state columns, expected {state_dim}",
            psi_cols.len()
        )));
    }
    let expected_ks: Vec<i64> = (first..=first + periods as i64).collect();
    let got_ks: Vec<i64> = table.rows.iter().map(|(k, _)| *k).collect();
    if got_ks != expected_ks {
        return Err(fail(format!(
            "CSV covers k = {:?}, expected {:?}",
            got_ks, expected_ks
        )));
    }

    let cell = |row: usize, col: usize, what: &str| -> Result<f64, ConfigError> {
        table.rows[row].1[col]
            .ok_or_else(|| fail(format!("missing {what} value at k = {}", table.rows[row].0)))
    };
    let mut x = Vec::with_capacity(periods + 1);
    let mut u = Vec::with_capacity(periods);
    let mut psi = Vec::with_capacity(periods);
    let mut psi0: Option<f64> = None;
    for row in 0..=periods {
        x.push(
            x_cols
                .iter()
                .map(|&c| cell(row, c, "state"))
                .collect::<Result<Vec<_>, _>>()?,
        );
        if row < periods {
            u.push(
                u_cols
                    .iter()
                    .map(|&c| cell(row, c, "control"))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        if row > 0 {
            psi.push(
                psi_cols
                    .iter()
                    .map(|&c| cell(row, c, "co-state"))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            if psi0.is_none() {
                if let Some(col) = psi0_col {
                    psi0 = table.rows[row].1[col];
                }
            }
        }
    }
    let psi0 = psi0.ok_or_else(|| fail("CSV carries no psi0 value"))?;
    let trajectory =
        Trajectory::new(first, x, u).map_err(|e| fail(format!("CSV trajectory: {e}")))?;
    Extremal::new(trajectory, psi0, psi).map_err(|e| fail(format!("CSV extremal: {e}")))
}

/// Read a state sequence (`k` and `x*` columns; any other columns are
/// ignored). Exactly the rows `first ..= first+len-1` must be present.
pub fn read_states(
    text: &str,
    state_dim: usize,
    first: i64,
    len: usize,
) -> Result<Vec<Vec<f64>>, ConfigError> {
    let table = parse_table(text)?;
    let x_cols = columns(&table, "x");
    if x_cols.len() != state_dim {
        return Err(fail(format!(
            "CSV has {} state columns, expected {state_dim}",
            x_cols.len()
        )));
    }
    let expected_ks: Vec<i64> = (first..first + len as i64).collect();
    let got_ks: Vec<i64> = table.rows.iter().map(|(k, _)| *k).collect();
    if got_ks != expected_ks {
        return Err(fail(format!(
            "CSV covers k = {:?}, expected {:?}",
            got_ks, expected_ks
        )));
    }
    table
        .rows
        .iter()
        .map(|(k, values)| {
            x_cols
                .iter()
                .map(|&c| values[c].ok_or_else(|| fail(format!("missing state value at k = {k}"))))
                .collect()
        })
        .collect()
}

/// Render a plain state sequence with `k` and `x*` columns.
pub fn write_states(first: i64, states: &[Vec<f64>]) -> String {
    let n = states[0].len();
    let mut out = String::new();
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    writeln!(out, "{}", header.join(",")).unwrap();
    for (i, row) in states.iter().enumerate() {
        let mut cells = vec![(first + i as i64).to_string()];
        cells.extend(row.iter().map(|&v| format_float(v)));
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremal_round_trip_is_bit_exact() {
        let t = Trajectory::new(
            2,
            vec![
                vec![0.1, -0.2],
                vec![0.30000000000000004, 1.0 / 3.0],
                vec![f64::MIN_POSITIVE, 12345.678901234567],
            ],
            vec![vec![0.5], vec![-1e-300]],
        )
        .unwrap();
        let e = Extremal::new(t, -1.0, vec![vec![1.0, 2.0], vec![3.0, -0.7]]).unwrap();
        let text = write_extremal(&e);
        let back = read_extremal(&text, 2, 1, 2, 2).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn state_sequence_round_trip() {
        let states = vec![vec![0.25], vec![0.1 + 0.2], vec![-3.5]];
        let text = write_states(-1, &states);
        let back = read_states(&text, 1, -1, 3).unwrap();
        assert_eq!(back, states);
    }

    #[test]
    fn extremal_reader_ignores_extra_columns_for_states() {
        let t = Trajectory::new(0, vec![vec![1.0], vec![2.0]], vec![vec![0.5]]).unwrap();
        let e = Extremal::new(t, -1.0, vec![vec![4.0]]).unwrap();
        let text = write_extremal(&e);
        // the same file serves as a plain state sequence
        let states = read_states(&text, 1, 0, 2).unwrap();
        assert_eq!(states, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn wrong_row_set_is_reported() {
        let text = "k,x1\n0,1.0\n2,2.0\n";
        let e = read_states(text, 1, 0, 2).unwrap_err();
        assert!(e.message.contains("covers k"), "{e}");
    }
}
