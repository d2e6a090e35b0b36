//! CSV and JSON formats for fields, study tables and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bench::{ProfileRow, StepRecord, StudyRow};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, NodeField, StaggeredField};
use crate::solver::SolveReport;

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

pub fn axis_name(axis: usize) -> &'static str {
    AXIS_NAMES[axis]
}

fn index_header(dim: usize) -> &'static str {
    if dim == 3 {
        "i,j,k"
    } else {
        "i,j"
    }
}

fn push_index(out: &mut String, dim: usize, c: [usize; 3]) {
    for v in &c[..dim] {
        let _ = write!(out, "{v},");
    }
}

pub fn node_csv(f: &NodeField) -> String {
    let spec = f.spec();
    let mut out = format!("{},value\n", index_header(spec.dim()));
    for (n, v) in f.values().iter().enumerate() {
        push_index(&mut out, spec.dim(), spec.coords(n));
        out.push_str(&fmt_float(*v));
        out.push('\n');
    }
    out
}

/// One staggered component, keyed by the integer index of its lower node.
pub fn component_csv(e: &StaggeredField, axis: usize) -> String {
    let spec = e.spec();
    let mut out = format!("axis,{},value\n", index_header(spec.dim()));
    for (n, v) in e.comp(axis).iter().enumerate() {
        out.push_str(axis_name(axis));
        out.push(',');
        push_index(&mut out, spec.dim(), spec.coords(n));
        out.push_str(&fmt_float(*v));
        out.push('\n');
    }
    out
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

/// Data rows of a CSV file as `(line number, fields)`, after checking the header.
fn csv_rows(path: &Path, text: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(parse_err(path, format!("line 1: expected header `{header}`, found `{}`", h.trim()))),
        None => return Err(parse_err(path, "empty file")),
    }
    Ok(lines
        .map(|(ln, l)| (ln + 1, l.split(',').map(|s| s.trim().to_string()).collect()))
        .collect())
}

fn parse_index(path: &Path, line: usize, spec: &GridSpec, fields: &[String]) -> Result<usize> {
    let mut c = [0usize; 3];
    for (a, f) in fields.iter().enumerate() {
        let v: usize = f
            .parse()
            .map_err(|_| parse_err(path, format!("line {line}: bad index `{f}`")))?;
        if v >= spec.cells()[a] {
            return Err(parse_err(path, format!("line {line}: index {v} out of range on axis {}", axis_name(a))));
        }
        c[a] = v;
    }
    Ok(spec.index(c))
}

fn parse_value(path: &Path, line: usize, f: &str) -> Result<f64> {
    f.parse().map_err(|_| parse_err(path, format!("line {line}: bad value `{f}`")))
}

fn fill(path: &Path, spec: &GridSpec, rows: Vec<(usize, usize, f64)>) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; spec.len()];
    let mut seen = vec![false; spec.len()];
    for (line, idx, v) in rows {
        if std::mem::replace(&mut seen[idx], true) {
            return Err(parse_err(path, format!("line {line}: duplicate entry")));
        }
        values[idx] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(parse_err(path, format!("missing entry for index {:?}", &spec.coords(missing)[..spec.dim()])));
    }
    Ok(values)
}

pub fn parse_node_csv(path: &Path, text: &str, spec: &GridSpec) -> Result<NodeField> {
    let dim = spec.dim();
    let mut parsed = Vec::new();
    for (line, fields) in csv_rows(path, text, &format!("{},value", index_header(dim)))? {
        if fields.len() != dim + 1 {
            return Err(parse_err(path, format!("line {line}: expected {} fields", dim + 1)));
        }
        let idx = parse_index(path, line, spec, &fields[..dim])?;
        parsed.push((line, idx, parse_value(path, line, &fields[dim])?));
    }
    NodeField::from_values(spec, fill(path, spec, parsed)?)
}

pub fn parse_component_csv(path: &Path, text: &str, spec: &GridSpec, axis: usize) -> Result<Vec<f64>> {
    let dim = spec.dim();
    let mut parsed = Vec::new();
    for (line, fields) in csv_rows(path, text, &format!("axis,{},value", index_header(dim)))? {
        if fields.len() != dim + 2 {
            return Err(parse_err(path, format!("line {line}: expected {} fields", dim + 2)));
        }
        if fields[0] != axis_name(axis) {
            return Err(parse_err(path, format!("line {line}: expected axis {}, found `{}`", axis_name(axis), fields[0])));
        }
        let idx = parse_index(path, line, spec, &fields[1..=dim])?;
        parsed.push((line, idx, parse_value(path, line, &fields[dim + 1])?));
    }
    fill(path, spec, parsed)
}

pub fn read_node_csv(path: &Path, spec: &GridSpec) -> Result<NodeField> {
    parse_node_csv(path, &fs::read_to_string(path)?, spec)
}

pub fn write_node_csv(path: &Path, f: &NodeField) -> Result<()> {
    Ok(fs::write(path, node_csv(f))?)
}

/// File name of the CSV holding component `axis`.
pub fn component_file_name(axis: usize) -> String {
    format!("E_{}.csv", axis_name(axis))
}

/// Writes `E_x.csv`, `E_y.csv` (and `E_z.csv`) into `dir`.
pub fn write_field_csvs(dir: &Path, e: &StaggeredField) -> Result<()> {
    for axis in 0..e.spec().dim() {
        fs::write(dir.join(component_file_name(axis)), component_csv(e, axis))?;
    }
    Ok(())
}

pub fn read_field_csvs(dir: &Path, spec: &GridSpec) -> Result<StaggeredField> {
    let comps = (0..spec.dim())
        .map(|axis| {
            let path = dir.join(component_file_name(axis));
            parse_component_csv(&path, &fs::read_to_string(&path)?, spec, axis)
        })
        .collect::<Result<Vec<_>>>()?;
    StaggeredField::from_components(spec, comps)
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("N,method,error_inf,order,passes,wall_time_ms\n");
    for r in rows {
        let order = r.order.map(fmt_float).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            r.method,
            fmt_float(r.error_inf),
            order,
            r.passes,
            fmt_float(r.wall_time_ms)
        );
    }
    out
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("method,pass,x,curl\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.method, r.pass, fmt_float(r.x), fmt_float(r.curl));
    }
    out
}

pub fn timeseries_csv(rows: &[StepRecord]) -> String {
    let mut out = String::from("step,method,passes,wall_time_ms,gauss_residual\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            r.method,
            r.passes,
            fmt_float(r.wall_time_ms),
            fmt_float(r.gauss_residual)
        );
    }
    out
}

pub fn report_json(report: &SolveReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report fields are plain data");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{ProfileRow, StudyRow};
    use crate::relax::RelaxMethod;
    use crate::solver::SolveStatus;
    use crate::SweepTrace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn floats_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v: f64 = rng.gen_range(-1e3..1e3) * 10f64.powi(rng.gen_range(-300..300));
            assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn node_csv_round_trip_2d_and_3d() {
        for spec in [GridSpec::new(&[1.0, 2.0], &[3, 2]).unwrap(), GridSpec::cube(3, 2, 1.0).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let f = NodeField::from_values(&spec, (0..spec.len()).map(|_| rng.gen()).collect()).unwrap();
            let text = node_csv(&f);
            assert_eq!(parse_node_csv(p(), &text, &spec).unwrap(), f);
        }
        let spec = GridSpec::new(&[1.0, 2.0], &[3, 2]).unwrap();
        let text = node_csv(&NodeField::constant(&spec, 1.0));
        assert!(text.starts_with("i,j,value\n0,0,1.0000000000000000e0\n1,0,"));
    }

    #[test]
    fn component_csv_round_trip() {
        let spec = GridSpec::cube(3, 3, 1.0).unwrap();
        let e = StaggeredField::from_fn(&spec, |a, x| a as f64 + x[0] - 0.3 * x[2]);
        for axis in 0..3 {
            let text = component_csv(&e, axis);
            assert!(text.starts_with("axis,i,j,k,value\n"));
            assert_eq!(parse_component_csv(p(), &text, &spec, axis).unwrap(), e.comp(axis));
        }
        assert!(parse_component_csv(p(), &component_csv(&e, 0), &spec, 1).is_err());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let spec = GridSpec::cube(2, 2, 1.0).unwrap();
        let err = |t: &str| parse_node_csv(p(), t, &spec).unwrap_err().to_string();
        assert!(err("").contains("empty"));
        assert!(err("a,b\n").contains("header"));
        assert!(err("i,j,value\n0,0,1\n0,x,1\n").contains("line 3"));
        assert!(err("i,j,value\n0,0,1\n0,2,1\n").contains("out of range"));
        assert!(err("i,j,value\n0,0,1\n0,0,1\n").contains("duplicate"));
        assert!(err("i,j,value\n0,0,1\n1,0,1\n0,1,1\n").contains("missing"));
        assert!(err("i,j,value\n0,0,abc\n").contains("bad value"));
    }

    #[test]
    fn field_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::cube(2, 4, 1.0).unwrap();
        let e = StaggeredField::from_fn(&spec, |a, x| (a as f64 + 1.0) * x[1].sin());
        write_field_csvs(dir.path(), &e).unwrap();
        assert!(dir.path().join("E_x.csv").exists() && dir.path().join("E_y.csv").exists());
        assert_eq!(read_field_csvs(dir.path(), &spec).unwrap(), e);
        let f = NodeField::constant(&spec, 0.25);
        let path = dir.path().join("phi.csv");
        write_node_csv(&path, &f).unwrap();
        assert_eq!(read_node_csv(&path, &spec).unwrap(), f);
    }

    #[test]
    fn table_formats() {
        let rows = vec![
            StudyRow { n: 32, method: RelaxMethod::ZigzagHlr, error_inf: 0.5, order: None, passes: 3, wall_time_ms: 0.0, status: SolveStatus::Converged },
            StudyRow { n: 64, method: RelaxMethod::ZigzagHlr, error_inf: 0.125, order: Some(2.0), passes: 4, wall_time_ms: 0.0, status: SolveStatus::Converged },
        ];
        let text = study_csv(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "N,method,error_inf,order,passes,wall_time_ms");
        assert_eq!(lines[1], "32,zigzag,5.0000000000000000e-1,,3,0.0000000000000000e0");
        assert_eq!(lines[2], "64,zigzag,1.2500000000000000e-1,2.0000000000000000e0,4,0.0000000000000000e0");
        let prof = profile_csv(&[ProfileRow { method: RelaxMethod::SingleMesh, pass: 50, x: 0.25, curl: -1.0 }]);
        assert_eq!(prof, "method,pass,x,curl\nsingle,50,2.5000000000000000e-1,-1.0000000000000000e0\n");
    }

    #[test]
    fn report_json_has_exact_fields() {
        let r = SolveReport {
            passes: 2,
            energy_history: vec![1.0, 0.5],
            gauss_residual: 0.0,
            curl_residual: 1e-9,
            avg_field: vec![0.0, 0.0],
            wall_time_ms: 0.0,
            error_inf: None,
            status: SolveStatus::Converged,
            work: SweepTrace::default(),
        };
        let v: serde_json::Value = serde_json::from_str(&report_json(&r)).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["avg_field", "curl_residual", "energy_history", "error_inf", "gauss_residual", "passes", "wall_time_ms"]
        );
        assert!(v["error_inf"].is_null());
    }
}
