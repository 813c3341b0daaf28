use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Interaction, SynthError};

const SCHEMA: &str = "lsdm-dataset";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Writes a header line followed by one JSON record per interaction.
pub fn save_dataset(path: &Path, data: &[Interaction]) -> Result<(), SynthError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: SCHEMA.to_string(),
        version: VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for item in data {
        writeln!(w, "{}", serde_json::to_string(item)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Interaction>, SynthError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let parse_err = |e: serde_json::Error| SynthError::Format {
            line: lineno,
            reason: e.to_string(),
        };
        if lineno == 1 {
            let header: Header = serde_json::from_str(&line).map_err(parse_err)?;
            if header.schema != SCHEMA || header.version != VERSION {
                return Err(SynthError::Format {
                    line: 1,
                    reason: format!("unsupported schema {} v{}", header.schema, header.version),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(parse_err)?);
    }
    Ok(out)
}
