//! Point and label file formats: Wavefront OBJ (`v`/`vn`), XYZ/XYZN text,
//! ASCII PLY with per-vertex color, and one-label-per-line text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use srgnet_core::{LabelMap, Point3, PointCloud};

use crate::error::{Error, Result};

/// Default colors for the first labels; later labels step the hue by the
/// golden ratio.
pub const DEFAULT_COLORS: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
    [128, 128, 128],
];

const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_895;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        for (i, c) in colors.iter().enumerate() {
            if colors[..i].contains(c) {
                return Err(Error::DuplicateColor(i));
            }
        }
        Ok(Self { colors })
    }

    /// The default palette extended to at least `k` entries.
    pub fn with_len(k: usize) -> Self {
        let mut colors: Vec<[u8; 3]> = DEFAULT_COLORS.to_vec();
        let mut step = 0usize;
        while colors.len() < k {
            let hue = (step as f64 * GOLDEN_RATIO_CONJUGATE).fract();
            let sat = [0.65, 0.85, 0.45][(step / 64) % 3];
            let c = hsv_to_rgb(hue, sat, 0.95);
            if !colors.contains(&c) {
                colors.push(c);
            }
            step += 1;
        }
        Self { colors }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, label: usize) -> Option<[u8; 3]> {
        self.colors.get(label).copied()
    }
}

impl Default for Palette {
    fn default() -> Self {
        Self::with_len(DEFAULT_COLORS.len())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let byte = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    [byte(r), byte(g), byte(b)]
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_reals(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::parse(path, line, format!("`{f}` is not a finite number"))),
        })
        .collect()
}

fn unit(path: &Path, line: usize, v: Point3) -> Result<Point3> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n.is_nan() || n <= 0.0 {
        return Err(Error::parse(path, line, "zero-length normal"));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

fn source_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One point per `v` record. `vn` records become normals (renormalized) when
/// there is exactly one per vertex. Everything else is skipped.
pub fn load_obj(path: &Path) -> Result<PointCloud> {
    parse_obj(&read_text(path)?, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut it = raw.split_whitespace();
        let tag = it.next();
        let fields: Vec<&str> = it.collect();
        match tag {
            Some("v") => {
                // x y z, optionally w or an rgb triple
                if !matches!(fields.len(), 3 | 4 | 6 | 7) {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("`v` needs 3 coordinates, found {} fields", fields.len()),
                    ));
                }
                let v = parse_reals(path, line, &fields[..3])?;
                positions.push([v[0], v[1], v[2]]);
            }
            Some("vn") => {
                if fields.len() != 3 {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("`vn` needs 3 components, found {}", fields.len()),
                    ));
                }
                let v = parse_reals(path, line, &fields)?;
                normals.push(unit(path, line, [v[0], v[1], v[2]])?);
            }
            _ => {}
        }
    }
    let normals = (!normals.is_empty() && normals.len() == positions.len()).then_some(normals);
    Ok(PointCloud::new(positions, normals, source_id(path))?)
}

/// Whitespace-separated rows of 3 (`x y z`) or 6 (`x y z nx ny nz`)
/// columns. Blank lines and `#` comments are skipped.
pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&read_text(path)?, path)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut arity = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if !matches!(fields.len(), 3 | 6) {
            return Err(Error::parse(
                path,
                line,
                format!("expected 3 or 6 columns, found {}", fields.len()),
            ));
        }
        match arity {
            None => arity = Some(fields.len()),
            Some(a) if a != fields.len() => {
                return Err(Error::MixedArity {
                    path: path.into(),
                    line,
                    expected: a,
                    found: fields.len(),
                })
            }
            _ => {}
        }
        let v = parse_reals(path, line, &fields)?;
        positions.push([v[0], v[1], v[2]]);
        if v.len() == 6 {
            normals.push(unit(path, line, [v[3], v[4], v[5]])?);
        }
    }
    let normals = (arity == Some(6)).then_some(normals);
    Ok(PointCloud::new(positions, normals, source_id(path))?)
}

/// Minimal ASCII PLY vertex reader: `x y z` and, when declared, `nx ny nz`.
pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let mut vertices = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let Some((i, raw)) = lines.next() else {
            return Err(Error::parse(path, text.lines().count(), "missing end_header"));
        };
        let f: Vec<&str> = raw.split_whitespace().collect();
        match f.as_slice() {
            ["ply"] | [] => {}
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::parse(path, i + 1, format!("unsupported PLY format `{fmt}`")))
            }
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertices = Some(
                        count
                            .parse::<usize>()
                            .map_err(|_| Error::parse(path, i + 1, "bad vertex count"))?,
                    );
                }
            }
            ["property", .., name] if in_vertex => props.push((*name).to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertices.ok_or_else(|| Error::parse(path, 1, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
        return Err(Error::parse(path, 1, "vertex element lacks x, y or z"));
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for (i, raw) in lines.take(n) {
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.len() != props.len() {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {} values, found {}", props.len(), f.len()),
            ));
        }
        let v = parse_reals(path, i + 1, &f)?;
        positions.push([v[x], v[y], v[z]]);
        if let Some([a, b, c]) = normal_cols {
            normals.push(unit(path, i + 1, [v[a], v[b], v[c]])?);
        }
    }
    if positions.len() != n {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("expected {n} vertices, found {}", positions.len()),
        ));
    }
    let normals = normal_cols.map(|_| normals);
    Ok(PointCloud::new(positions, normals, source_id(path))?)
}

/// Dispatches on the file extension (`obj`, `ply`, anything else as XYZ).
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
    match ext.as_deref() {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply(path),
        _ => load_xyz(path),
    }
}

/// `x y z` or `x y z nx ny nz` rows with shortest round-trip formatting, so
/// reading the file back reproduces the cloud exactly.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.positions().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(n) = cloud.normals() {
            let _ = write!(s, " {} {} {}", n[i][0], n[i][1], n[i][2]);
        }
        s.push('\n');
    }
    s
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_text(path, &format_xyz(cloud))
}

/// `v` lines, then `vn` lines when the cloud has normals, with shortest
/// round-trip formatting.
pub fn format_obj(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 80);
    for p in cloud.positions() {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for n in cloud.normals().unwrap_or(&[]) {
        let _ = writeln!(s, "vn {} {} {}", n[0], n[1], n[2]);
    }
    s
}

/// `printf("%g")`: six significant digits, trailing zeros dropped.
pub fn format_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let digits = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.digits$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn format_ply_colored(cloud: &PointCloud, labels: &LabelMap, palette: &Palette) -> Result<String> {
    labels.check(cloud.len())?;
    let needed = labels.labels().iter().max().map_or(0, |&m| m + 1);
    if palette.len() < needed {
        return Err(Error::PaletteTooSmall {
            needed,
            available: palette.len(),
        });
    }
    let mut s = String::with_capacity(200 + cloud.len() * 40);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    s.push_str("end_header\n");
    for (p, &l) in cloud.positions().iter().zip(labels.labels()) {
        let [r, g, b] = palette.color(l).expect("palette size checked");
        let _ = writeln!(
            s,
            "{} {} {} {r} {g} {b}",
            format_g(p[0]),
            format_g(p[1]),
            format_g(p[2])
        );
    }
    Ok(s)
}

/// ASCII PLY with `x y z` as float and `red green blue` as uchar, colored by
/// `palette[label]`.
pub fn export_ply_colored(cloud: &PointCloud, labels: &LabelMap, palette: &Palette, path: &Path) -> Result<()> {
    write_text(path, &format_ply_colored(cloud, labels, palette)?)
}

pub fn format_labels(labels: &LabelMap) -> String {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels.labels() {
        let _ = writeln!(s, "{l}");
    }
    s
}

pub fn write_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    write_text(path, &format_labels(labels))
}

pub fn parse_labels(text: &str, path: &Path) -> Result<LabelMap> {
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        let v: i64 = t
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("`{t}` is not an integer label")))?;
        if v < 0 {
            return Err(Error::NegativeLabel {
                path: path.into(),
                line: i + 1,
                value: v,
            });
        }
        labels.push(v as usize);
    }
    if labels.is_empty() {
        return Err(Error::NoLabels(path.into()));
    }
    Ok(LabelMap::from_labels(labels))
}

/// Inverse of [`write_labels`].
pub fn read_labels(path: &Path) -> Result<LabelMap> {
    parse_labels(&read_text(path)?, path)
}
