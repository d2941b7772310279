//! PCD v0.7 reader and writer for xyz clouds.
//!
//! Reading accepts ASCII and little-endian binary bodies whose FIELDS include
//! `x`, `y` and `z` as single 4-byte floats; any other fields are skipped.
//! Writing always emits exactly `x y z` as `F 4`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::cloud::{Point, PointCloud};

#[derive(Debug, Error)]
pub enum PcdError {
    #[error("malformed PCD header at byte {offset}: {message}")]
    MalformedHeader { offset: usize, message: String },
    #[error("unsupported field `{field}` at byte {offset}: {message}")]
    UnsupportedField {
        offset: usize,
        field: String,
        message: String,
    },
    #[error("unsupported DATA encoding `{encoding}` at byte {offset}")]
    UnsupportedEncoding { offset: usize, encoding: String },
    #[error("PCD body truncated at byte {offset}: expected {expected} points, found {found}")]
    TruncatedBody {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("unparsable value `{token}` at byte {offset}")]
    BadValue { offset: usize, token: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

/// Side information gathered while reading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcdReport {
    /// Points in the file (WIDTH x HEIGHT).
    pub declared: usize,
    /// Points dropped because a coordinate was NaN or infinite.
    pub dropped_nonfinite: usize,
}

#[derive(Debug, Clone)]
struct Field {
    name: String,
    size: usize,
    kind: char,
    count: usize,
}

#[derive(Debug)]
struct Header {
    fields: Vec<Field>,
    points: usize,
    encoding: PcdEncoding,
    body_offset: usize,
    /// Element offsets of x, y, z within one point record (in scalars for
    /// ASCII, bytes for binary).
    xyz_scalar: [usize; 3],
    xyz_byte: [usize; 3],
}

impl Header {
    fn scalars_per_point(&self) -> usize {
        self.fields.iter().map(|f| f.count).sum()
    }

    fn point_step(&self) -> usize {
        self.fields.iter().map(|f| f.size * f.count).sum()
    }
}

fn malformed(offset: usize, message: impl Into<String>) -> PcdError {
    PcdError::MalformedHeader {
        offset,
        message: message.into(),
    }
}

fn parse_usize(tok: &str, offset: usize, key: &str) -> Result<usize, PcdError> {
    tok.parse().map_err(|_| {
        malformed(
            offset,
            format!("{key} expects an unsigned integer, got `{tok}`"),
        )
    })
}

fn parse_header(data: &[u8]) -> Result<Header, PcdError> {
    let mut pos = 0usize;
    let mut fields: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut kinds: Option<Vec<char>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width = None;
    let mut height = None;
    let mut declared_points = None;
    let mut fields_offset = 0;

    loop {
        if pos >= data.len() {
            return Err(malformed(pos, "header ended before DATA line"));
        }
        let line_start = pos;
        let end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(data.len(), |i| pos + i);
        pos = (end + 1).min(data.len());
        let line = std::str::from_utf8(&data[line_start..end])
            .map_err(|_| malformed(line_start, "header line is not valid UTF-8"))?
            .trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default().to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => {
                fields_offset = line_start;
                fields = Some(rest.iter().map(|s| s.to_string()).collect());
            }
            "SIZE" => {
                sizes = Some(
                    rest.iter()
                        .map(|t| parse_usize(t, line_start, "SIZE"))
                        .collect::<Result<_, _>>()?,
                )
            }
            "TYPE" => {
                kinds = Some(
                    rest.iter()
                        .map(|t| match t.as_bytes() {
                            [c] => Ok((*c as char).to_ascii_uppercase()),
                            _ => Err(malformed(
                                line_start,
                                format!("TYPE entry `{t}` is not a single letter"),
                            )),
                        })
                        .collect::<Result<_, _>>()?,
                )
            }
            "COUNT" => {
                counts = Some(
                    rest.iter()
                        .map(|t| parse_usize(t, line_start, "COUNT"))
                        .collect::<Result<_, _>>()?,
                )
            }
            "WIDTH" => {
                width = Some(parse_usize(
                    rest.first().unwrap_or(&""),
                    line_start,
                    "WIDTH",
                )?)
            }
            "HEIGHT" => {
                height = Some(parse_usize(
                    rest.first().unwrap_or(&""),
                    line_start,
                    "HEIGHT",
                )?)
            }
            "POINTS" => {
                declared_points = Some(parse_usize(
                    rest.first().unwrap_or(&""),
                    line_start,
                    "POINTS",
                )?)
            }
            "DATA" => {
                let enc = rest.first().copied().unwrap_or_default();
                let encoding = match enc.to_ascii_lowercase().as_str() {
                    "ascii" => PcdEncoding::Ascii,
                    "binary" => PcdEncoding::Binary,
                    _ => {
                        return Err(PcdError::UnsupportedEncoding {
                            offset: line_start,
                            encoding: enc.to_string(),
                        })
                    }
                };
                return finish_header(
                    fields_offset,
                    line_start,
                    pos,
                    encoding,
                    (fields, sizes, kinds, counts),
                    (width, height, declared_points),
                );
            }
            other => {
                return Err(malformed(
                    line_start,
                    format!("unknown header key `{other}`"),
                ))
            }
        }
    }
}

type FieldLists = (
    Option<Vec<String>>,
    Option<Vec<usize>>,
    Option<Vec<char>>,
    Option<Vec<usize>>,
);

fn finish_header(
    fields_offset: usize,
    data_line: usize,
    body_offset: usize,
    encoding: PcdEncoding,
    (names, sizes, kinds, counts): FieldLists,
    (width, height, declared): (Option<usize>, Option<usize>, Option<usize>),
) -> Result<Header, PcdError> {
    let names = names.ok_or_else(|| malformed(data_line, "missing FIELDS"))?;
    let sizes = sizes.ok_or_else(|| malformed(data_line, "missing SIZE"))?;
    let kinds = kinds.ok_or_else(|| malformed(data_line, "missing TYPE"))?;
    let counts = counts.unwrap_or_else(|| vec![1; names.len()]);
    if sizes.len() != names.len() || kinds.len() != names.len() || counts.len() != names.len() {
        return Err(malformed(
            fields_offset,
            "FIELDS, SIZE, TYPE and COUNT lengths differ",
        ));
    }
    let width = width.ok_or_else(|| malformed(data_line, "missing WIDTH"))?;
    let height = height.unwrap_or(1);
    let points = width * height;
    if let Some(p) = declared {
        if p != points {
            return Err(malformed(
                data_line,
                format!("POINTS {p} disagrees with WIDTH*HEIGHT {points}"),
            ));
        }
    }

    let fields: Vec<Field> = names
        .into_iter()
        .zip(sizes)
        .zip(kinds)
        .zip(counts)
        .map(|(((name, size), kind), count)| Field {
            name,
            size,
            kind,
            count,
        })
        .collect();
    for f in &fields {
        let ok = match f.kind {
            'F' => matches!(f.size, 4 | 8),
            'I' | 'U' => matches!(f.size, 1 | 2 | 4 | 8),
            _ => false,
        };
        if !ok {
            return Err(PcdError::UnsupportedField {
                offset: fields_offset,
                field: f.name.clone(),
                message: format!("TYPE {} SIZE {}", f.kind, f.size),
            });
        }
    }

    let mut xyz_scalar = [0; 3];
    let mut xyz_byte = [0; 3];
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let pos = fields.iter().position(|f| f.name == *name).ok_or_else(|| {
            PcdError::UnsupportedField {
                offset: fields_offset,
                field: name.to_string(),
                message: "required field missing".into(),
            }
        })?;
        let f = &fields[pos];
        if f.kind != 'F' || f.size != 4 || f.count != 1 {
            return Err(PcdError::UnsupportedField {
                offset: fields_offset,
                field: f.name.clone(),
                message: format!(
                    "coordinates must be F 4 x1, got {} {} x{}",
                    f.kind, f.size, f.count
                ),
            });
        }
        xyz_scalar[axis] = fields[..pos].iter().map(|f| f.count).sum();
        xyz_byte[axis] = fields[..pos].iter().map(|f| f.size * f.count).sum();
    }

    Ok(Header {
        fields,
        points,
        encoding,
        body_offset,
        xyz_scalar,
        xyz_byte,
    })
}

fn parse_ascii_body(data: &[u8], h: &Header) -> Result<Vec<[f32; 3]>, PcdError> {
    let per_point = h.scalars_per_point();
    let mut out = Vec::with_capacity(h.points);
    let mut pos = h.body_offset;
    let mut row = [0f32; 3];
    while out.len() < h.points {
        if pos >= data.len() {
            return Err(PcdError::TruncatedBody {
                offset: data.len(),
                expected: h.points,
                found: out.len(),
            });
        }
        let start = pos;
        let end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(data.len(), |i| pos + i);
        pos = (end + 1).min(data.len());
        let line = std::str::from_utf8(&data[start..end]).map_err(|_| PcdError::BadValue {
            offset: start,
            token: "<non-utf8>".into(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < per_point {
            return Err(PcdError::TruncatedBody {
                offset: start,
                expected: h.points,
                found: out.len(),
            });
        }
        for axis in 0..3 {
            let tok = toks[h.xyz_scalar[axis]];
            row[axis] = tok.parse::<f32>().map_err(|_| PcdError::BadValue {
                offset: start + tok.as_ptr() as usize - line.as_ptr() as usize,
                token: tok.to_string(),
            })?;
        }
        out.push([row[0], row[1], row[2]]);
    }
    Ok(out)
}

fn parse_binary_body(data: &[u8], h: &Header) -> Result<Vec<[f32; 3]>, PcdError> {
    let step = h.point_step();
    let body = &data[h.body_offset.min(data.len())..];
    let needed = step * h.points;
    if body.len() < needed {
        return Err(PcdError::TruncatedBody {
            offset: data.len(),
            expected: h.points,
            found: body.len() / step.max(1),
        });
    }
    let read =
        |rec: &[u8], off: usize| f32::from_le_bytes(rec[off..off + 4].try_into().expect("4 bytes"));
    Ok(body[..needed]
        .chunks_exact(step)
        .map(|rec| h.xyz_byte.map(|off| read(rec, off)))
        .collect())
}

/// Parses a complete PCD image held in memory.
pub fn parse_pcd(data: &[u8]) -> Result<(PointCloud, PcdReport), PcdError> {
    let header = parse_header(data)?;
    let raw = match header.encoding {
        PcdEncoding::Ascii => parse_ascii_body(data, &header)?,
        PcdEncoding::Binary => parse_binary_body(data, &header)?,
    };
    let declared = raw.len();
    let points: Vec<Point> = raw
        .into_iter()
        .map(Point::from_array)
        .filter(Point::is_finite)
        .collect();
    let report = PcdReport {
        declared,
        dropped_nonfinite: declared - points.len(),
    };
    Ok((PointCloud::from_finite(points), report))
}

/// Reads a PCD file, returning the cloud and what was dropped.
pub fn read_pcd_with_report(path: impl AsRef<Path>) -> Result<(PointCloud, PcdReport), PcdError> {
    let data = fs::read(path)?;
    parse_pcd(&data)
}

/// Reads a PCD file. Non-finite points are dropped with a logged warning.
pub fn read_pcd(path: impl AsRef<Path>) -> Result<PointCloud, PcdError> {
    let path = path.as_ref();
    let (cloud, report) = read_pcd_with_report(path)?;
    if report.dropped_nonfinite > 0 {
        log::warn!(
            "{}: dropped {} non-finite point(s) of {}",
            path.display(),
            report.dropped_nonfinite,
            report.declared
        );
    }
    Ok(cloud)
}

/// `printf("%.9g")`: nine significant digits, enough to round-trip any f32.
pub fn format_sig9(v: f32) -> String {
    const PRECISION: i32 = 9;
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..PRECISION).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_fraction(&format!("{:.*}", (PRECISION - 1 - exp) as usize, v)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `cloud` as PCD to any sink.
pub fn write_pcd_to(
    cloud: &PointCloud,
    mut w: impl Write,
    encoding: PcdEncoding,
) -> io::Result<()> {
    let n = cloud.len();
    let data = match encoding {
        PcdEncoding::Ascii => "ascii",
        PcdEncoding::Binary => "binary",
    };
    write!(
        w,
        "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH {n}\nHEIGHT 1\n\
         VIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {data}\n"
    )?;
    match encoding {
        PcdEncoding::Ascii => {
            for p in cloud {
                writeln!(
                    w,
                    "{} {} {}",
                    format_sig9(p.x),
                    format_sig9(p.y),
                    format_sig9(p.z)
                )?;
            }
        }
        PcdEncoding::Binary => {
            let mut buf = Vec::with_capacity(n * 12);
            for p in cloud {
                for v in p.to_array() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()
}

pub fn write_pcd(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    encoding: PcdEncoding,
) -> Result<(), PcdError> {
    let file = fs::File::create(path)?;
    write_pcd_to(cloud, BufWriter::new(file), encoding)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_vec(cloud: &PointCloud, enc: PcdEncoding) -> Vec<u8> {
        let mut buf = Vec::new();
        write_pcd_to(cloud, &mut buf, enc).unwrap();
        buf
    }

    const HEADER_3: &str =
        "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 3\nHEIGHT 1\n\
                            VIEWPOINT 0 0 0 1 0 0 0\nPOINTS 3\nDATA ascii\n";

    #[test]
    fn sig9_matches_printf() {
        // expected strings from C printf("%.9g", (double)(float)v)
        let cases: [(f32, &str); 12] = [
            (0.0, "0"),
            (1.5, "1.5"),
            (-2.25, "-2.25"),
            (3.0, "3"),
            (0.1, "0.100000001"),
            (100.125, "100.125"),
            (-0.001, "-0.00100000005"),
            (1e-5, "9.99999975e-06"),
            (123456789.0, "123456792"),
            (1e10, "1e+10"),
            (2.5e-7, "2.49999999e-07"),
            (0.5, "0.5"),
        ];
        for (v, s) in cases {
            assert_eq!(format_sig9(v), s);
        }
    }

    #[test]
    fn ascii_golden() {
        let c = PointCloud::new(vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.5, -2.25, 3.0),
            Point::new(0.1, 100.125, -0.001),
        ])
        .unwrap();
        let text = String::from_utf8(to_vec(&c, PcdEncoding::Ascii)).unwrap();
        let expected =
            format!("{HEADER_3}0 0 0\n1.5 -2.25 3\n0.100000001 100.125 -0.00100000005\n");
        assert_eq!(text, expected);

        let (back, report) = parse_pcd(text.as_bytes()).unwrap();
        assert!(back.bit_eq(&c));
        assert_eq!(report.dropped_nonfinite, 0);
    }

    #[test]
    fn empty_cloud_header() {
        let text = String::from_utf8(to_vec(&PointCloud::empty(), PcdEncoding::Binary)).unwrap();
        assert!(text.contains("WIDTH 0\n"));
        assert!(text.ends_with("POINTS 0\nDATA binary\n"));
        assert!(parse_pcd(text.as_bytes()).unwrap().0.is_empty());
    }

    #[test]
    fn drops_non_finite() {
        let mut body = String::from(
            "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 10\nHEIGHT 1\nPOINTS 10\nDATA ascii\n",
        );
        for i in 0..10 {
            if i == 4 {
                body.push_str("nan 1 2\n");
            } else {
                body.push_str(&format!("{i} {i} {i}\n"));
            }
        }
        let (c, report) = parse_pcd(body.as_bytes()).unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(
            report,
            PcdReport {
                declared: 10,
                dropped_nonfinite: 1
            }
        );
    }

    #[test]
    fn extra_fields_are_skipped() {
        let ascii =
            "# comment\nVERSION .7\nFIELDS rgb x intensity y z\nSIZE 4 4 2 4 4\nTYPE U F I F F\n\
                     COUNT 1 1 2 1 1\nWIDTH 2\nHEIGHT 1\nPOINTS 2\nDATA ascii\n\
                     7 1.0 5 6 2.0 3.0\n7 4.0 5 6 5.0 6.0\n";
        let (c, _) = parse_pcd(ascii.as_bytes()).unwrap();
        assert_eq!(
            c.points(),
            &[Point::new(1., 2., 3.), Point::new(4., 5., 6.)]
        );

        let mut bin = b"FIELDS x pad y z\nSIZE 4 8 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\nWIDTH 1\nHEIGHT 1\nDATA binary\n".to_vec();
        bin.extend_from_slice(&1.0f32.to_le_bytes());
        bin.extend_from_slice(&0f64.to_le_bytes());
        for v in [2.0f32, 3.0] {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        let (c, _) = parse_pcd(&bin).unwrap();
        assert_eq!(c.points(), &[Point::new(1., 2., 3.)]);
    }

    #[test]
    fn distinct_errors() {
        let no_data = "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 1\n";
        assert!(matches!(
            parse_pcd(no_data.as_bytes()),
            Err(PcdError::MalformedHeader { .. })
        ));

        let bad_key = "VERSION 0.7\nBOGUS 1\nDATA ascii\n";
        assert!(matches!(
            parse_pcd(bad_key.as_bytes()),
            Err(PcdError::MalformedHeader { offset: 12, .. })
        ));

        let double = "FIELDS x y z\nSIZE 8 4 4\nTYPE F F F\nWIDTH 1\nDATA ascii\n1 2 3\n";
        assert!(matches!(
            parse_pcd(double.as_bytes()),
            Err(PcdError::UnsupportedField { offset: 0, .. })
        ));

        let missing_z = "FIELDS x y\nSIZE 4 4\nTYPE F F\nWIDTH 1\nDATA ascii\n1 2\n";
        assert!(matches!(
            parse_pcd(missing_z.as_bytes()),
            Err(PcdError::UnsupportedField { .. })
        ));

        let short = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 2\nDATA ascii\n1 2 3\n";
        match parse_pcd(short.as_bytes()) {
            Err(PcdError::TruncatedBody {
                offset,
                expected: 2,
                found: 1,
            }) => assert_eq!(offset, short.len()),
            other => panic!("{other:?}"),
        }

        let mut bin = b"FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 2\nDATA binary\n".to_vec();
        bin.extend_from_slice(&[0u8; 20]);
        assert!(matches!(
            parse_pcd(&bin),
            Err(PcdError::TruncatedBody { found: 1, .. })
        ));

        let compressed = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 1\nDATA binary_compressed\n";
        assert!(matches!(
            parse_pcd(compressed.as_bytes()),
            Err(PcdError::UnsupportedEncoding { .. })
        ));

        let junk = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 1\nDATA ascii\n1 abc 3\n";
        let body_start = junk.find("1 abc").unwrap();
        assert!(matches!(
            parse_pcd(junk.as_bytes()),
            Err(PcdError::BadValue { offset, .. }) if offset == body_start + 2
        ));

        let mismatch = "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nWIDTH 2\nPOINTS 3\nDATA ascii\n";
        assert!(matches!(
            parse_pcd(mismatch.as_bytes()),
            Err(PcdError::MalformedHeader { .. })
        ));
    }
}
