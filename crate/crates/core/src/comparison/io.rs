use super::{ClassTag, ComparisonError, Extrapolation, KLSurface, SurfaceKind, TabulatedMonotone};
use crate::csvfmt::{fmt_f64, parse_f64};
use std::io::{Read, Write};

fn perr(e: impl std::fmt::Display) -> ComparisonError {
    ComparisonError::Parse(e.to_string())
}

fn split_header(text: &str) -> Result<(&str, &str), ComparisonError> {
    let (first, rest) = text.split_once('\n').ok_or_else(|| perr("missing header line"))?;
    let meta = first
        .trim_end_matches('\r')
        .strip_prefix('#')
        .ok_or_else(|| perr("first line must be a '#' metadata comment"))?;
    Ok((meta.trim(), rest))
}

fn meta_field<'a>(meta: &'a str, key: &str) -> Result<&'a str, ComparisonError> {
    meta.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| perr(format!("metadata lacks {key}=")))
}

impl TabulatedMonotone {
    /// Two-column CSV preceded by `# class=<tag> extrapolation=<hold|linear:slope>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ComparisonError> {
        let ext = match self.extrapolation() {
            Extrapolation::Hold => "hold".to_string(),
            Extrapolation::Linear { slope } => format!("linear:{}", fmt_f64(slope)),
        };
        writeln!(w, "# class={} extrapolation={ext}", self.class()).map_err(perr)?;
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["abscissa", "value"]).map_err(perr)?;
        for (s, v) in self.grid().iter().zip(self.values()) {
            cw.write_record([fmt_f64(*s), fmt_f64(*v)]).map_err(perr)?;
        }
        cw.flush().map_err(perr)
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self, ComparisonError> {
        let mut text = String::new();
        r.read_to_string(&mut text).map_err(perr)?;
        let (meta, body) = split_header(&text)?;
        let class: ClassTag = meta_field(meta, "class")?.parse()?;
        let ext = meta_field(meta, "extrapolation")?;
        let extrapolation = if ext == "hold" {
            Extrapolation::Hold
        } else if let Some(s) = ext.strip_prefix("linear:") {
            Extrapolation::Linear {
                slope: parse_f64(s).map_err(perr)?,
            }
        } else {
            return Err(perr(format!("unknown extrapolation {ext:?}")));
        };
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let (mut grid, mut values) = (Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec.map_err(perr)?;
            if rec.len() != 2 {
                return Err(perr(format!("expected 2 columns, got {}", rec.len())));
            }
            grid.push(parse_f64(&rec[0]).map_err(perr)?);
            values.push(parse_f64(&rec[1]).map_err(perr)?);
        }
        Self::new(grid, values, class, extrapolation)
    }
}

impl KLSurface {
    /// Header row `t\r,r_0,r_1,...`, then one row per t sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ComparisonError> {
        let kind = match self.kind() {
            SurfaceKind::KL => "KL",
            SurfaceKind::Growth => "Growth",
            SurfaceKind::TimeGrowth => "TimeGrowth",
        };
        writeln!(w, "# kind={kind}").map_err(perr)?;
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["t\\r".to_string()];
        header.extend(self.r_grid().iter().map(|r| fmt_f64(*r)));
        cw.write_record(&header).map_err(perr)?;
        for (it, t) in self.t_grid().iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            row.extend((0..self.r_grid().len()).map(|ir| fmt_f64(self.at(ir, it))));
            cw.write_record(&row).map_err(perr)?;
        }
        cw.flush().map_err(perr)
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self, ComparisonError> {
        let mut text = String::new();
        r.read_to_string(&mut text).map_err(perr)?;
        let (meta, body) = split_header(&text)?;
        let kind = match meta_field(meta, "kind")? {
            "KL" => SurfaceKind::KL,
            "Growth" => SurfaceKind::Growth,
            "TimeGrowth" => SurfaceKind::TimeGrowth,
            other => return Err(perr(format!("unknown surface kind {other:?}"))),
        };
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header = rd.headers().map_err(perr)?.clone();
        let r_grid = header
            .iter()
            .skip(1)
            .map(parse_f64)
            .collect::<Result<Vec<_>, _>>()
            .map_err(perr)?;
        let mut t_grid = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); r_grid.len()];
        for rec in rd.records() {
            let rec = rec.map_err(perr)?;
            if rec.len() != r_grid.len() + 1 {
                return Err(perr("ragged surface row"));
            }
            t_grid.push(parse_f64(&rec[0]).map_err(perr)?);
            for (ir, col) in cols.iter_mut().enumerate() {
                col.push(parse_f64(&rec[ir + 1]).map_err(perr)?);
            }
        }
        Self::new(r_grid, t_grid, cols, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let t = TabulatedMonotone::from_fn(vec![0.0, 0.3, 1.0, 2.5], ClassTag::Kinf, |s| s.powf(1.7)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = TabulatedMonotone::read_csv(buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn surface_round_trip() {
        let s = KLSurface::from_fn(vec![0.0, 1.0, 2.0], vec![0.0, 0.5], SurfaceKind::KL, |r, t| {
            r * (-t).exp() / 3.0
        })
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("t\\r,"));
        assert_eq!(KLSurface::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn missing_metadata_is_rejected() {
        assert!(TabulatedMonotone::read_csv("abscissa,value\n0,0\n".as_bytes()).is_err());
    }
}
