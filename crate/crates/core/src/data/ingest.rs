use super::{DataError, RawInteraction, Result};
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Parsed interactions plus bookkeeping about skipped rows.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub interactions: Vec<RawInteraction>,
    pub skipped: usize,
    pub header: bool,
    pub delimiter: char,
}

/// Reads a tab- or comma-delimited interaction log.
///
/// Columns are `user, item, timestamp[, domain]`. The delimiter is taken
/// from the first line (tab wins if present). A first line whose timestamp
/// field is not an integer is treated as a header.
pub fn ingest(path: &Path) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(BufReader::new(file)).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn ingest_reader(reader: impl BufRead) -> Result<IngestReport> {
    let mut interactions = Vec::new();
    let mut skipped = 0;
    let mut total = 0;
    let mut first_bad: Option<(usize, String)> = None;
    let mut delimiter = None;
    let mut header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: String::new(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let delim = *delimiter.get_or_insert(if line.contains('\t') { '\t' } else { ',' });
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if lineno == 0 && fields.len() >= 3 && fields[2].parse::<u64>().is_err() {
            header = true;
            continue;
        }
        total += 1;
        match parse_row(&fields) {
            Ok(row) => interactions.push(row),
            Err(reason) => {
                skipped += 1;
                first_bad.get_or_insert((lineno + 1, reason));
            }
        }
    }
    if total > 0 && skipped * 2 > total {
        let (line, reason) = first_bad.unwrap_or_default();
        return Err(DataError::TooManyMalformed {
            malformed: skipped,
            total,
            first_bad: line,
            reason,
        });
    }
    Ok(IngestReport {
        interactions,
        skipped,
        header,
        delimiter: delimiter.unwrap_or('\t'),
    })
}

fn parse_row(fields: &[&str]) -> std::result::Result<RawInteraction, String> {
    if fields.len() < 3 {
        return Err(format!("expected at least 3 columns, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item id".into());
    }
    let timestamp = fields[2]
        .parse::<u64>()
        .map_err(|_| format!("bad timestamp {:?}", fields[2]))?;
    let domain = fields
        .get(3)
        .filter(|d| !d.is_empty())
        .map(|d| d.to_string());
    Ok(RawInteraction {
        user: fields[0].to_string(),
        item: fields[1].to_string(),
        timestamp,
        domain,
    })
}
