use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::Scalar;

/// Positive-class probabilities keyed by `(text_id, label_name)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodingTable<T> {
    entries: BTreeMap<(String, String), T>,
}

impl<T: Scalar> EncodingTable<T> {
    pub fn new() -> Self {
        EncodingTable { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, text_id: &str, label: &str, probability: T) -> Result<()> {
        if !(probability >= T::zero() && probability <= T::one()) {
            return Err(Error::arg(format!("probability {probability} outside [0,1]")));
        }
        let key = (text_id.to_string(), label.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::Conflict(format!("duplicate encoding for ({text_id}, {label})")));
        }
        self.entries.insert(key, probability);
        Ok(())
    }

    pub fn get(&self, text_id: &str, label: &str) -> Option<T> {
        self.entries.get(&(text_id.to_string(), label.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, T)> + '_ {
        self.entries.iter().map(|((t, l), &p)| (t.as_str(), l.as_str(), p))
    }

    /// Fails with every missing `text_id/label` pair.
    pub fn require_complete<'a, I>(&self, text_ids: I, labels: &[String]) -> Result<()>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut missing = Vec::new();
        for t in text_ids {
            for l in labels {
                if self.get(t, l).is_none() {
                    missing.push(format!("{t}/{l}"));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Completeness { missing })
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("encoding table is missing column '{name}'")))
        };
        let (ct, cl, cp) = (col("text_id")?, col("label_name")?, col("probability")?);
        let mut table = EncodingTable::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let raw = rec.get(cp).unwrap_or_default().trim();
            let p: f64 = raw
                .parse()
                .map_err(|_| Error::Row { line, message: format!("probability '{raw}' is not numeric") })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Row { line, message: format!("probability {p} outside [0,1]") });
            }
            let t = rec.get(ct).unwrap_or_default().trim();
            let l = rec.get(cl).unwrap_or_default().trim();
            table.insert(t, l, T::of(p)).map_err(|e| match e {
                Error::Conflict(m) => Error::Conflict(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        Ok(table)
    }
}

/// Reads a `text_id,label_name,probability` table.
pub fn import_external_encodings<T: Scalar>(path: impl AsRef<Path>) -> Result<EncodingTable<T>> {
    EncodingTable::read_csv(std::fs::File::open(path)?)
}

pub fn write_encodings<T: Scalar, W: Write>(table: &EncodingTable<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["text_id", "label_name", "probability"])?;
    for (t, l, p) in table.iter() {
        w.write_record([t, l, p.to_string().as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_entry() {
        let t: EncodingTable<f64> = EncodingTable::read_csv("text_id,label_name,probability\nt1,gamemove,0.7\n".as_bytes()).unwrap();
        assert_eq!(t.get("t1", "gamemove"), Some(0.7));
    }

    #[test]
    fn out_of_range_is_row_error() {
        let r = EncodingTable::<f64>::read_csv("text_id,label_name,probability\nt1,a,0.2\nt1,b,1.3\n".as_bytes());
        assert!(matches!(r, Err(Error::Row { line: 3, .. })));
    }

    #[test]
    fn duplicate_is_conflict() {
        let r = EncodingTable::<f64>::read_csv("text_id,label_name,probability\nt1,a,0.2\nt1,a,0.3\n".as_bytes());
        assert!(matches!(r, Err(Error::Conflict(_))));
    }

    #[test]
    fn completeness_lists_pairs() {
        let mut t = EncodingTable::<f64>::new();
        t.insert("t1", "gamemove", 0.5).unwrap();
        let labels = vec!["gamemove".to_string(), "rapport".to_string()];
        match t.require_complete(["t1"], &labels) {
            Err(Error::Completeness { missing }) => assert_eq!(missing, vec!["t1/rapport".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let mut t = EncodingTable::<f64>::new();
        t.insert("t1", "a", 0.1 + 0.2).unwrap();
        t.insert("t2", "a", 1.0 / 3.0).unwrap();
        let mut buf = Vec::new();
        write_encodings(&t, &mut buf).unwrap();
        assert_eq!(EncodingTable::read_csv(buf.as_slice()).unwrap(), t);
    }
}
