//! Catalog files: one CSV per block plus a JSON manifest.
//!
//! ```text
//! number,indicator,yes_score,no_score,layer
//! 2,Can the system be manipulated to produce significant damage?,-1.000,0.000,relevance
//! 2.1,Does the product comply with recognized cybersecurity standards?,0.360,0.000,mitigation
//! ```
//!
//! The `layer` column is optional. Scores carry exactly three decimals.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Block, Catalog, CatalogError, IdParseError, Indicator, IndicatorId, Layer, StructureIssue, MAX_WEIGHT};
use crate::decimal::Score;

pub const CATALOG_HEADER: [&str; 5] = ["number", "indicator", "yes_score", "no_score", "layer"];

/// Raw text of one block file with the identity given to it by the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSource {
    pub block_id: String,
    pub title: String,
    pub text: String,
}

impl BlockSource {
    pub fn new(block_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        BlockSource { block_id: block_id.into(), title: title.into(), text: text.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestBlock {
    pub block_id: String,
    pub title: String,
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogManifest {
    pub catalog_id: String,
    pub version: String,
    pub blocks: Vec<ManifestBlock>,
}

impl CatalogManifest {
    pub fn read(path: &Path) -> Result<Self, CatalogError> {
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|e| CatalogError::Manifest(format!("{}: {e}", path.display())))
    }

    /// Reads every block file, resolving relative paths against the manifest's directory.
    pub fn read_sources(&self, manifest_path: &Path) -> Result<Vec<BlockSource>, CatalogError> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.blocks
            .iter()
            .map(|b| {
                let text = read_file(&base.join(&b.file))?;
                Ok(BlockSource::new(&b.block_id, &b.title, text))
            })
            .collect()
    }
}

fn read_file(path: &Path) -> Result<String, CatalogError> {
    fs::read_to_string(path).map_err(|source| CatalogError::Io { path: path.to_path_buf(), source })
}

/// Loads and strictly parses a catalog from its manifest.
pub fn load_catalog(manifest_path: &Path) -> Result<Catalog, CatalogError> {
    let manifest = CatalogManifest::read(manifest_path)?;
    let sources = manifest.read_sources(manifest_path)?;
    parse_catalog(&sources, &manifest.catalog_id, &manifest.version)
}

pub(crate) enum RowProblem {
    Malformed(String),
    BadSegment(IdParseError),
    EmptyText(IndicatorId),
    ScoreOutOfRange(IndicatorId, Score),
}

impl RowProblem {
    fn into_error(self, block: &str, line: u64) -> CatalogError {
        let parse = |reason: String| CatalogError::Parse { block: block.to_string(), line, reason };
        match self {
            RowProblem::Malformed(reason) => parse(reason),
            RowProblem::BadSegment(e) => {
                CatalogError::Structure { block: block.to_string(), issue: StructureIssue::BadSegment(e) }
            }
            RowProblem::EmptyText(id) => parse(format!("indicator {id} has empty question text")),
            RowProblem::ScoreOutOfRange(id, s) => {
                parse(format!("indicator {id} score {s} exceeds magnitude {MAX_WEIGHT}"))
            }
        }
    }
}

/// Row-level parse of one block file. Rows that could still be read as an
/// indicator (even with empty text or an out-of-range score) are kept so that
/// lint can report structure problems as well.
pub(crate) struct ParsedRows {
    pub indicators: Vec<(u64, Indicator)>,
    pub problems: Vec<(u64, RowProblem)>,
}

pub(crate) fn parse_rows(text: &str) -> ParsedRows {
    let mut out = ParsedRows { indicators: Vec::new(), problems: Vec::new() };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();

    let width = match records.next() {
        None => {
            out.problems.push((1, RowProblem::Malformed("missing header row".into())));
            return out;
        }
        Some(Err(e)) => {
            out.problems.push((1, RowProblem::Malformed(e.to_string())));
            return out;
        }
        Some(Ok(header)) => {
            let names: Vec<&str> = header.iter().collect();
            if names == CATALOG_HEADER[..4] {
                4
            } else if names == CATALOG_HEADER {
                5
            } else {
                out.problems.push((
                    1,
                    RowProblem::Malformed(format!("header must be `{}` (layer optional)", CATALOG_HEADER.join(","))),
                ));
                return out;
            }
        }
    };

    for record in records {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.problems.push((line, RowProblem::Malformed(e.to_string())));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != width {
            out.problems
                .push((line, RowProblem::Malformed(format!("expected {width} fields, found {}", record.len()))));
            continue;
        }
        let id = match record[0].parse::<IndicatorId>() {
            Ok(id) => id,
            Err(e) => {
                out.problems.push((line, RowProblem::BadSegment(e)));
                continue;
            }
        };
        let score = |i: usize, name: &str| {
            Score::parse_strict(&record[i]).map_err(|e| RowProblem::Malformed(format!("{name}: {e}")))
        };
        let (yes, no) = match (score(2, "yes_score"), score(3, "no_score")) {
            (Ok(y), Ok(n)) => (y, n),
            (Err(p), _) | (_, Err(p)) => {
                out.problems.push((line, p));
                continue;
            }
        };
        let layer = if width == 5 {
            match Layer::parse(&record[4]) {
                Some(l) => l,
                None => {
                    out.problems.push((line, RowProblem::Malformed(format!("unknown layer `{}`", &record[4]))));
                    continue;
                }
            }
        } else {
            Layer::Other
        };
        let indicator = Indicator::new(id.clone(), &record[1], yes, no).with_layer(layer);
        if indicator.text.trim().is_empty() {
            out.problems.push((line, RowProblem::EmptyText(id.clone())));
        }
        for s in [yes, no] {
            if s.abs() > MAX_WEIGHT {
                out.problems.push((line, RowProblem::ScoreOutOfRange(id.clone(), s)));
            }
        }
        out.indicators.push((line, indicator));
    }
    out
}

/// Strictly parses one block file.
pub fn parse_block(source: &BlockSource) -> Result<Block, CatalogError> {
    let rows = parse_rows(&source.text);
    if let Some((line, problem)) = rows.problems.into_iter().next() {
        return Err(problem.into_error(&source.block_id, line));
    }
    Block::new(&source.block_id, &source.title, rows.indicators.into_iter().map(|(_, i)| i))
}

pub fn parse_catalog(sources: &[BlockSource], catalog_id: &str, version: &str) -> Result<Catalog, CatalogError> {
    let blocks = sources.iter().map(parse_block).collect::<Result<Vec<_>, _>>()?;
    Catalog::new(catalog_id, version, blocks)
}

/// Renders a block in catalog format. The `layer` column is written only when
/// some indicator carries a layer other than `other`.
pub fn serialize_block(block: &Block) -> String {
    let with_layer = block.indicators().any(|i| i.layer != Layer::Other);
    let width = if with_layer { 5 } else { 4 };
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    writer.write_record(&CATALOG_HEADER[..width]).expect("in-memory write");
    for indicator in block.indicators() {
        let id = indicator.id.to_string();
        let yes = indicator.yes_score.to_string();
        let no = indicator.no_score.to_string();
        let mut row = vec![id.as_str(), indicator.text.as_str(), yes.as_str(), no.as_str()];
        if with_layer {
            row.push(indicator.layer.as_str());
        }
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn serialize_catalog(catalog: &Catalog) -> Vec<(String, String)> {
    catalog.blocks().iter().map(|b| (b.block_id.clone(), serialize_block(b))).collect()
}

/// One-time conversion of published indicator tables into catalog format.
///
/// Accepts tab- or comma-separated input whose header names the columns
/// `number`, `indicator` (or `question`), `yes_score`, `no_score` and
/// optionally `layer`, in any order and case. Numbers lose a trailing dot
/// (`2.2.` becomes `2.2`) and scores are re-rendered with three decimals.
pub fn convert_published(text: &str) -> Result<String, CatalogError> {
    let conversion = |line: u64, reason: String| CatalogError::Parse { block: "<published>".into(), line, reason };
    let first_line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let delimiter = if first_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| conversion(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase().replace([' ', '-'], "_"))
        .collect();
    let column = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let missing = |name: &str| conversion(1, format!("missing `{name}` column"));
    let number = column(&["number", "id", "no"]).ok_or_else(|| missing("number"))?;
    let question = column(&["indicator", "question", "text"]).ok_or_else(|| missing("indicator"))?;
    let yes_col = column(&["yes_score", "yes"]).ok_or_else(|| missing("yes_score"))?;
    let no_col = column(&["no_score", "no"]).ok_or_else(|| missing("no_score"))?;
    let layer_col = column(&["layer"]);

    let mut indicators = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| conversion(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let id: IndicatorId = field(number).parse().map_err(|e: IdParseError| conversion(line, e.to_string()))?;
        let score = |i: usize| Score::parse_lenient(field(i)).map_err(|e| conversion(line, e.to_string()));
        let layer = match layer_col {
            Some(i) => {
                Layer::parse(field(i)).ok_or_else(|| conversion(line, format!("unknown layer `{}`", field(i))))?
            }
            None => Layer::Other,
        };
        indicators.push(Indicator::new(id, field(question), score(yes_col)?, score(no_col)?).with_layer(layer));
    }
    let block = Block::new("<published>", "", indicators)?;
    Ok(serialize_block(&block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::fixtures::security_block;

    #[test]
    fn single_row_block() {
        let src = BlockSource::new("b", "B", "number,indicator,yes_score,no_score\n1,Is X true?,0.000,0.000\n");
        let block = parse_block(&src).unwrap();
        assert_eq!(block.len(), 1);
        assert!(block.children(&"1".parse().unwrap()).unwrap().is_empty());
    }

    #[test]
    fn orphan_row_is_structure_error() {
        let src =
            BlockSource::new("b", "B", "number,indicator,yes_score,no_score\n2,A?,0.000,0.000\n2.5.1,B?,0.000,0.000\n");
        match parse_block(&src) {
            Err(CatalogError::Structure { issue: StructureIssue::OrphanParent { parent, .. }, .. }) => {
                assert_eq!(parent.to_string(), "2.5")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "number,indicator,yes_score,no_score\n1,A?,0.000,0.000\n2,B?,0.5,0.000\n";
        match parse_block(&BlockSource::new("b", "B", text)) {
            Err(CatalogError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "number,indicator,yes_score,no_score\n1,A?,0.000\n";
        assert!(matches!(parse_block(&BlockSource::new("b", "B", text)), Err(CatalogError::Parse { line: 2, .. })));
        let text = "num,indicator,yes_score,no_score\n";
        assert!(matches!(parse_block(&BlockSource::new("b", "B", text)), Err(CatalogError::Parse { line: 1, .. })));
        let text = "number,indicator,yes_score,no_score\n1,,0.000,0.000\n";
        assert!(matches!(parse_block(&BlockSource::new("b", "B", text)), Err(CatalogError::Parse { .. })));
        let text = "number,indicator,yes_score,no_score\n1,A?,-4.001,0.000\n";
        assert!(matches!(parse_block(&BlockSource::new("b", "B", text)), Err(CatalogError::Parse { .. })));
        let text = "number,indicator,yes_score,no_score\n1.0,A?,0.000,0.000\n";
        assert!(matches!(
            parse_block(&BlockSource::new("b", "B", text)),
            Err(CatalogError::Structure { issue: StructureIssue::BadSegment(_), .. })
        ));
    }

    #[test]
    fn rows_sorted_by_id_regardless_of_file_order() {
        let text = "number,indicator,yes_score,no_score\n1.2,B?,0.000,0.000\n1,A?,0.000,0.000\n1.1,C?,0.000,0.000\n";
        let block = parse_block(&BlockSource::new("b", "B", text)).unwrap();
        let order: Vec<_> = block.ids().map(|i| i.to_string()).collect();
        assert_eq!(order, ["1", "1.1", "1.2"]);
    }

    #[test]
    fn serialized_security_row() {
        let text = serialize_block(&security_block());
        assert!(text.lines().any(|l| l == "2.2.1,Question 2.2.1?,0.000,-0.280"), "{text}");
        assert!(text.starts_with("number,indicator,yes_score,no_score\n"));
    }

    #[test]
    fn empty_block_is_header_only() {
        let block = Block::new("e", "Empty", []).unwrap();
        assert_eq!(serialize_block(&block), "number,indicator,yes_score,no_score\n");
    }

    #[test]
    fn layer_column_round_trips() {
        let text = "number,indicator,yes_score,no_score,layer\n1,\"Is it, really?\",-0.500,0.000,relevance\n1.1,Fixed?,0.500,0.000,mitigation\n";
        let block = parse_block(&BlockSource::new("b", "B", text)).unwrap();
        assert_eq!(serialize_block(&block), text);
    }

    #[test]
    fn published_table_conversion() {
        let published = "number\tindicator\tyes_score\tno_score\n2\tRisky?\t-1.000\t0.000\n2.2.\tMeasures?\t0.28\t0\n2.2.1\tTested?\t0.000\t-0.280\n";
        let converted = convert_published(published).unwrap();
        assert_eq!(
            converted,
            "number,indicator,yes_score,no_score\n2,Risky?,-1.000,0.000\n2.2,Measures?,0.280,0.000\n2.2.1,Tested?,0.000,-0.280\n"
        );
        assert!(convert_published("a\tb\n1\t2\n").is_err());
    }
}
