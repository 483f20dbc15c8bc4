//! ASCII PLY reading and writing.
//!
//! Written files carry `float x, y, z` and optionally one integer per-point
//! attribute (object index, grid index). Coordinates are printed as the
//! shortest decimal that round-trips at f32 precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::PointCloud3;
use crate::error::{Error, Result};
use crate::numeric::Scalar;

/// A cloud read from disk with its optional integer attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud<T> {
    pub cloud: PointCloud3<T>,
    /// `(property name, one value per point)`.
    pub attribute: Option<(String, Vec<i64>)>,
}

pub fn ply_string<T: Scalar>(cloud: &PointCloud3<T>, attribute: Option<(&str, &[i64])>) -> Result<String> {
    if let Some((name, vals)) = attribute {
        if vals.len() != cloud.len() {
            return Err(Error::shape(
                "write_ply",
                format!("attribute `{name}` has {} values for {} points", vals.len(), cloud.len()),
            ));
        }
    }
    let mut s = String::with_capacity(64 + cloud.len() * 32);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if let Some((name, _)) = attribute {
        let _ = writeln!(s, "property int {name}");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let f = |v: T| v.to_f32().unwrap_or(f32::NAN);
        let _ = write!(s, "{} {} {}", f(p[0]), f(p[1]), f(p[2]));
        if let Some((_, vals)) = attribute {
            let _ = write!(s, " {}", vals[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_ply<T: Scalar>(
    path: &Path,
    cloud: &PointCloud3<T>,
    attribute: Option<(&str, &[i64])>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, ply_string(cloud, attribute)?).map_err(|e| Error::io(path, e))
}

pub fn read_ply<T: Scalar>(path: &Path) -> Result<PlyCloud<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

const SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8",
    "int16", "uint16", "int32", "uint32", "float32", "float64",
];

pub fn parse_ply<T: Scalar>(text: &str, path: &Path) -> Result<PlyCloud<T>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing `ply` magic line".into())),
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut header_end = None;
    for (no, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(err(no, format!("unsupported format `{other}` (only ascii)")))
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(
                        n.parse()
                            .map_err(|_| err(no, format!("bad vertex count `{n}`")))?,
                    );
                } else if *n != "0" {
                    return Err(err(no, format!("unsupported non-empty element `{name}`")));
                }
            }
            ["property", ty, name] if in_vertex => {
                if !SCALAR_TYPES.contains(ty) {
                    return Err(err(no, format!("unsupported property type `{ty}`")));
                }
                props.push(name.to_string());
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err(no, "list properties on vertices are not supported".into()))
            }
            ["property", ..] => {}
            ["end_header"] => {
                header_end = Some(no);
                break;
            }
            _ => return Err(err(no, format!("unrecognized header line `{line}`"))),
        }
    }
    let header_end = header_end.ok_or_else(|| err(text.lines().count(), "missing end_header".into()))?;
    let count = count.ok_or_else(|| err(header_end, "no vertex element declared".into()))?;
    let pos = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| err(header_end, format!("missing vertex property `{name}`")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
    let extra = (0..props.len()).find(|&k| k != ix && k != iy && k != iz);

    let mut points = Vec::with_capacity(count);
    let mut attr = Vec::new();
    let mut found = 0;
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        if found == count {
            return Err(err(no, format!("expected {count} vertices, found extra data `{line}`")));
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(err(
                no,
                format!("expected {} values per vertex, found {}", props.len(), vals.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            vals[k]
                .parse::<f64>()
                .map_err(|_| err(no, format!("bad number `{}`", vals[k])))
        };
        points.push([T::lit(num(ix)?), T::lit(num(iy)?), T::lit(num(iz)?)]);
        if let Some(k) = extra {
            attr.push(num(k)? as i64);
        }
        found += 1;
    }
    if found != count {
        return Err(err(
            text.lines().count(),
            format!("expected {count} vertices, found {found}"),
        ));
    }
    Ok(PlyCloud {
        cloud: PointCloud3::new(points),
        attribute: extra.map(|k| (props[k].clone(), attr)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32() {
        let c = PointCloud3::new(vec![[0.1f32, -2.5, 3.0e-7], [1.0 / 3.0, 7.0, -0.0]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        write_ply(&p, &c, Some(("label", &[4, -1]))).unwrap();
        let back = read_ply::<f32>(&p).unwrap();
        assert_eq!(back.cloud, c);
        assert_eq!(back.attribute, Some(("label".to_string(), vec![4, -1])));
    }

    #[test]
    fn empty_cloud_is_valid() {
        let s = ply_string(&PointCloud3::<f64>::new(vec![]), None).unwrap();
        let back = parse_ply::<f64>(&s, Path::new("e.ply")).unwrap();
        assert!(back.cloud.is_empty());
        assert!(back.attribute.is_none());
    }

    #[test]
    fn truncated_file_names_counts() {
        let c = PointCloud3::new(vec![[1.0f64, 2.0, 3.0]; 3]);
        let s = ply_string(&c, None).unwrap();
        let cut: String = s.lines().take(s.lines().count() - 1).collect::<Vec<_>>().join("\n");
        let msg = parse_ply::<f64>(&cut, Path::new("t.ply")).unwrap_err().to_string();
        assert!(msg.contains("expected 3 vertices, found 2"), "{msg}");
    }

    #[test]
    fn malformed_header_reports_line() {
        let bad = "ply\nformat ascii 1.0\nelement vertex x\nend_header\n";
        match parse_ply::<f64>(bad, Path::new("b.ply")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad = "ply\nformat binary_little_endian 1.0\n";
        assert!(parse_ply::<f64>(bad, Path::new("b.ply")).is_err());
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(parse_ply::<f64>(bad, Path::new("b.ply")).unwrap_err().to_string().contains("`y`"));
    }
}
