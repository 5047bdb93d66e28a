use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value as Json};

use super::{CohortSchema, Episode, EpisodeSet, Stage, Value, VariableKind};
use crate::error::{Error, Result};

/// Loads episodes from a JSONL file (one patient per line) or a long-format
/// CSV file (one row per patient-stage). The format is chosen by extension;
/// anything other than `.csv` is read as JSONL.
pub fn load_episodes(path: impl AsRef<Path>, schema: &CohortSchema) -> Result<EpisodeSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_csv(&text, schema)
    } else {
        parse_jsonl(&text, schema)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn check_stage_index(patient: &str, expected: usize, got: i64) -> Result<()> {
    if got != expected as i64 {
        return Err(Error::Schema(format!(
            "non-contiguous stages for patient '{patient}': expected t={expected}, found t={got}"
        )));
    }
    Ok(())
}

fn action_of(schema: &CohortSchema, label: &str, patient: &str) -> Result<usize> {
    schema
        .action_index(label)
        .ok_or_else(|| Error::Schema(format!("unknown action label '{label}' for patient '{patient}'")))
}

fn finish(episodes: Vec<Episode>) -> Result<EpisodeSet> {
    if episodes.is_empty() {
        return Err(Error::NoEpisodes);
    }
    Ok(EpisodeSet::new(episodes))
}

fn json_context_value(v: &Json, kind: VariableKind, line: usize, name: &str) -> Result<Option<Value>> {
    match (v, kind) {
        (Json::Null, _) => Ok(None),
        (Json::Number(n), _) => Ok(Some(Value::Num(n.as_f64().unwrap_or(f64::NAN)))),
        (Json::String(s), VariableKind::Numeric) => match s.trim().parse::<f64>() {
            Ok(x) => Ok(Some(Value::Num(x))),
            Err(_) => Err(parse_err(line, format!("variable '{name}': '{s}' is not numeric"))),
        },
        (Json::String(s), VariableKind::Categorical) => Ok(Some(Value::Cat(s.clone()))),
        (Json::Bool(b), VariableKind::Categorical) => Ok(Some(Value::Cat(b.to_string()))),
        (other, _) => Err(parse_err(line, format!("variable '{name}': unsupported value {other}"))),
    }
}

/// Parses JSONL text: `{"patient_id", "stages": [{"t", "context", "action", "severity"}]}` per line.
pub fn parse_jsonl(text: &str, schema: &CohortSchema) -> Result<EpisodeSet> {
    let mut episodes = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: Json = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        let obj = record
            .as_object()
            .ok_or_else(|| parse_err(line, "record is not a JSON object"))?;
        let patient_id = match obj.get("patient_id") {
            Some(Json::String(s)) => s.clone(),
            Some(Json::Number(n)) => n.to_string(),
            _ => return Err(parse_err(line, "missing patient_id")),
        };
        if !ids.insert(patient_id.clone()) {
            return Err(Error::Schema(format!("duplicate patient '{patient_id}'")));
        }
        let stages_json = obj
            .get("stages")
            .and_then(Json::as_array)
            .ok_or_else(|| parse_err(line, "missing stages array"))?;
        if stages_json.is_empty() {
            return Err(Error::Schema(format!("patient '{patient_id}' has no stages")));
        }
        let mut stages = Vec::with_capacity(stages_json.len());
        for (s, stage) in stages_json.iter().enumerate() {
            let so = stage
                .as_object()
                .ok_or_else(|| parse_err(line, "stage is not an object"))?;
            if let Some(t) = so.get("t") {
                let t = t.as_i64().ok_or_else(|| parse_err(line, "stage index t is not an integer"))?;
                check_stage_index(&patient_id, s + 1, t)?;
            }
            let label = match so.get("action") {
                Some(Json::String(a)) => a.clone(),
                Some(Json::Number(n)) => n.to_string(),
                _ => return Err(parse_err(line, "stage without action")),
            };
            let action = action_of(schema, &label, &patient_id)?;
            let severity = match so.get("severity") {
                None | Some(Json::Null) => None,
                Some(v) => Some(v.as_f64().ok_or_else(|| parse_err(line, "severity is not a number"))?),
            };
            let empty = Map::new();
            let ctx = match so.get("context") {
                None | Some(Json::Null) => &empty,
                Some(Json::Object(m)) => m,
                Some(_) => return Err(parse_err(line, "context is not an object")),
            };
            for key in ctx.keys() {
                if schema.variable_index(key).is_none() {
                    return Err(Error::Schema(format!("unknown variable '{key}' (line {line})")));
                }
            }
            let context = schema
                .variables
                .iter()
                .map(|v| match ctx.get(&v.name) {
                    None => Ok(None),
                    Some(x) => json_context_value(x, v.kind, line, &v.name),
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                context,
                action,
                severity,
            });
        }
        episodes.push(Episode { patient_id, stages });
    }
    finish(episodes)
}

/// Parses long-format CSV: `patient_id, t, action, severity, <variables...>`,
/// sorted by patient then stage. Empty cells are missing values.
pub fn parse_csv(text: &str, schema: &CohortSchema) -> Result<EpisodeSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();

    let severity_name = schema.severity_name();
    let mut col_patient = None;
    let mut col_t = None;
    let mut col_action = None;
    let mut col_severity = None;
    let mut var_cols = vec![None; schema.variables.len()];
    for (j, h) in headers.iter().enumerate() {
        match h {
            "patient_id" => col_patient = Some(j),
            "t" => col_t = Some(j),
            "action" => col_action = Some(j),
            _ if h == severity_name => col_severity = Some(j),
            _ => match schema.variable_index(h) {
                Some(v) => var_cols[v] = Some(j),
                None => return Err(Error::Schema(format!("unknown column '{h}'"))),
            },
        }
    }
    let (col_patient, col_t, col_action) = match (col_patient, col_t, col_action) {
        (Some(p), Some(t), Some(a)) => (p, t, a),
        _ => return Err(parse_err(1, "header must contain patient_id, t and action")),
    };

    let mut episodes: Vec<Episode> = Vec::new();
    let mut finished = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let patient = record.get(col_patient).unwrap_or("").to_string();
        if patient.is_empty() {
            return Err(parse_err(line, "empty patient_id"));
        }
        let t: i64 = record
            .get(col_t)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, "stage index t is not an integer"))?;
        let label = record.get(col_action).unwrap_or("");
        let action = action_of(schema, label, &patient)?;
        let severity = match col_severity.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(s.parse().map_err(|_| parse_err(line, format!("severity '{s}' is not numeric")))?),
        };
        let context = schema
            .variables
            .iter()
            .zip(&var_cols)
            .map(|(v, col)| {
                let cell = col.and_then(|c| record.get(c)).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                match v.kind {
                    VariableKind::Numeric => cell
                        .parse::<f64>()
                        .map(|x| Some(Value::Num(x)))
                        .map_err(|_| parse_err(line, format!("variable '{}': '{cell}' is not numeric", v.name))),
                    VariableKind::Categorical => Ok(Some(Value::Cat(cell.to_string()))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let stage = Stage {
            context,
            action,
            severity,
        };

        match episodes.last_mut() {
            Some(ep) if ep.patient_id == patient => {
                check_stage_index(&patient, ep.stages.len() + 1, t)?;
                ep.stages.push(stage);
            }
            _ => {
                if let Some(prev) = episodes.last() {
                    finished.insert(prev.patient_id.clone());
                }
                if finished.contains(&patient) {
                    return Err(Error::Schema(format!(
                        "rows for patient '{patient}' are not contiguous (line {line})"
                    )));
                }
                check_stage_index(&patient, 1, t)?;
                episodes.push(Episode {
                    patient_id: patient,
                    stages: vec![stage],
                });
            }
        }
    }
    finish(episodes)
}

fn value_to_json(v: &Option<Value>) -> Json {
    match v {
        None => Json::Null,
        Some(Value::Num(x)) => serde_json::Number::from_f64(*x).map(Json::Number).unwrap_or(Json::Null),
        Some(Value::Cat(s)) => Json::String(s.clone()),
    }
}

/// Writes episodes in the JSONL interchange format.
pub fn write_jsonl<W: Write>(mut out: W, episodes: &EpisodeSet, schema: &CohortSchema) -> Result<()> {
    for ep in &episodes.episodes {
        let stages: Vec<Json> = ep
            .stages
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let context: Map<String, Json> = schema
                    .variables
                    .iter()
                    .zip(&st.context)
                    .map(|(v, x)| (v.name.clone(), value_to_json(x)))
                    .collect();
                serde_json::json!({
                    "t": i + 1,
                    "context": context,
                    "action": schema.action_labels[st.action],
                    "severity": st.severity,
                })
            })
            .collect();
        let record = serde_json::json!({ "patient_id": ep.patient_id, "stages": stages });
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VariableSpec;

    fn schema() -> CohortSchema {
        CohortSchema::new(
            vec![VariableSpec::numeric("cdai"), VariableSpec::categorical("sex").fixed()],
            vec!["MTX".into(), "TNF".into(), "JAK".into()],
            "MTX",
        )
        .unwrap()
    }

    #[test]
    fn jsonl_two_patients_three_stages() {
        let text = r#"{"patient_id":"p1","stages":[{"t":1,"context":{"cdai":3.2,"sex":"f"},"action":"MTX","severity":null},{"t":2,"context":{"cdai":null},"action":"TNF"},{"t":3,"context":{"cdai":4.0},"action":"MTX"}]}
{"patient_id":"p2","stages":[{"t":1,"context":{},"action":"JAK"},{"t":2,"context":{"cdai":1},"action":"JAK"},{"t":3,"context":{"sex":"m"},"action":"TNF","severity":2.5}]}
"#;
        let eps = parse_jsonl(text, &schema()).unwrap();
        assert_eq!(eps.len(), 2);
        assert_eq!(eps.n_stages(), 6);
        assert_eq!(eps.episodes[0].stages[1].action, 1);
        assert_eq!(eps.episodes[0].stages[1].context[0], None);
        assert_eq!(eps.episodes[1].stages[2].severity, Some(2.5));
        assert_eq!(eps.episodes[0].stages[0].context[1], Some(Value::Cat("f".into())));
    }

    #[test]
    fn csv_gap_in_stages_is_rejected() {
        let text = "patient_id,t,action,severity,cdai,sex\np1,1,MTX,,1.0,f\np1,3,TNF,,2.0,f\n";
        let err = parse_csv(text, &schema()).unwrap_err();
        assert!(err.to_string().contains("non-contiguous stages"), "{err}");
    }

    #[test]
    fn empty_input_has_no_episodes() {
        assert!(matches!(parse_csv("patient_id,t,action\n", &schema()), Err(Error::NoEpisodes)));
        assert!(matches!(parse_jsonl("", &schema()), Err(Error::NoEpisodes)));
    }

    #[test]
    fn unknown_action_and_column_are_schema_errors() {
        let text = "patient_id,t,action,cdai\np1,1,XYZ,1.0\n";
        assert!(matches!(parse_csv(text, &schema()), Err(Error::Schema(_))));
        let text = "patient_id,t,action,bmi\np1,1,MTX,1.0\n";
        assert!(matches!(parse_csv(text, &schema()), Err(Error::Schema(_))));
        let text = r#"{"patient_id":"p","stages":[{"t":1,"context":{"bmi":1},"action":"MTX"}]}"#;
        assert!(matches!(parse_jsonl(text, &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "patient_id,t,action,cdai\np1,1,MTX,1.0\np1,2,MTX,abc\n";
        match parse_csv(text, &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "{\"patient_id\":\"p\",\"stages\":[{\"action\":\"MTX\"}]}\n{not json\n";
        match parse_jsonl(text, &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn interleaved_patients_are_rejected() {
        let text = "patient_id,t,action\np1,1,MTX\np2,1,MTX\np1,2,MTX\n";
        assert!(matches!(parse_csv(text, &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn unseen_category_tokens_are_kept() {
        let text = "patient_id,t,action,sex\np1,1,MTX,x\n";
        let eps = parse_csv(text, &schema()).unwrap();
        assert_eq!(eps.episodes[0].stages[0].context[1], Some(Value::Cat("x".into())));
    }

    #[test]
    fn jsonl_writer_round_trips() {
        let text = "patient_id,t,action,severity,cdai,sex\np1,1,MTX,3,1.5,f\np1,2,TNF,,,\np2,1,JAK,1,0.25,m\n";
        let s = schema();
        let eps = parse_csv(text, &s).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &eps, &s).unwrap();
        let back = parse_jsonl(std::str::from_utf8(&buf).unwrap(), &s).unwrap();
        assert_eq!(back, eps);
    }
}
