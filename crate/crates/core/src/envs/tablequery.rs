//! Single-table SQL simulator: DESCRIBE, SELECT with one equality filter,
//! UPDATE, and a final `Answer: [...]` submission compared as a multiset.

use serde::{Deserialize, Serialize};

use super::{EnvOutcome, TaskEnv, TaskSpec};
use crate::types::EnvFamily;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableParams {
    pub table: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Expected answer payload, element order ignored.
    pub answer: Vec<String>,
}

pub struct TableEnv {
    id: String,
    max_turns: usize,
    o0: String,
    table: String,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
    answer: Vec<String>,
    done: bool,
    succeeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Text(String),
    Comma,
    Equals,
    Star,
}

/// Splits a statement into words, quoted strings, and operator tokens.
/// Backticked identifiers become words; quoted literals become text.
fn tokenize(statement: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let mut chars = statement.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            ';' => {
                chars.next();
            }
            ',' => {
                chars.next();
                tokens.push(Token::Comma);
            }
            '=' => {
                chars.next();
                tokens.push(Token::Equals);
            }
            '*' => {
                chars.next();
                tokens.push(Token::Star);
            }
            '\'' | '"' | '`' => {
                chars.next();
                let mut text = String::new();
                let mut closed = false;
                for d in chars.by_ref() {
                    if d == c {
                        closed = true;
                        break;
                    }
                    text.push(d);
                }
                if !closed {
                    return Err(format!("unterminated {c} quote"));
                }
                tokens.push(if c == '`' { Token::Word(text) } else { Token::Text(text) });
            }
            _ => {
                let mut word = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_whitespace() || matches!(d, ',' | '=' | ';' | '*' | '\'' | '"' | '`') {
                        break;
                    }
                    word.push(d);
                    chars.next();
                }
                tokens.push(Token::Word(word));
            }
        }
    }
    Ok(tokens)
}

fn is_keyword(token: &Token, keyword: &str) -> bool {
    matches!(token, Token::Word(w) if w.eq_ignore_ascii_case(keyword))
}

fn values_equal(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

struct Condition {
    column: usize,
    value: String,
}

impl TableEnv {
    pub fn new(spec: &TaskSpec, params: TableParams) -> Self {
        let width = params.columns.len();
        let rows = params
            .rows
            .into_iter()
            .map(|mut row| {
                row.resize(width, String::new());
                row
            })
            .collect();
        TableEnv {
            id: spec.id.clone(),
            max_turns: spec.max_turns(),
            o0: spec.initial_observation(),
            table: params.table,
            columns: params.columns,
            rows,
            answer: params.answer,
            done: false,
            succeeded: false,
        }
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    fn check_table(&self, name: &str) -> Result<(), String> {
        if name.eq_ignore_ascii_case(&self.table) {
            Ok(())
        } else {
            Err(format!("ERROR 1146 (42S02): Table '{name}' doesn't exist"))
        }
    }

    /// Parses `WHERE col = value` from the token tail; empty tail means no filter.
    fn parse_condition(&self, tokens: &[Token]) -> Result<Option<Condition>, String> {
        if tokens.is_empty() {
            return Ok(None);
        }
        if !is_keyword(&tokens[0], "WHERE") {
            return Err("ERROR: syntax error near the end of the statement".to_string());
        }
        let column = match tokens.get(1) {
            Some(Token::Word(w)) => w.clone(),
            _ => return Err("ERROR: syntax error in the WHERE clause".to_string()),
        };
        if !matches!(tokens.get(2), Some(Token::Equals)) {
            return Err("ERROR: syntax error in the WHERE clause".to_string());
        }
        let value = match tokens.get(3) {
            Some(Token::Word(w)) => w.clone(),
            Some(Token::Text(t)) => t.clone(),
            _ => return Err("ERROR: syntax error in the WHERE clause".to_string()),
        };
        if tokens.len() > 4 {
            return Err("ERROR: syntax error after the WHERE clause".to_string());
        }
        let column = self
            .column_index(&column)
            .ok_or(format!("ERROR 1054 (42S22): Unknown column '{column}' in 'where clause'"))?;
        Ok(Some(Condition { column, value }))
    }

    fn run_describe(&self, tokens: &[Token]) -> String {
        let name = match tokens.first() {
            Some(Token::Word(w)) => w.clone(),
            _ => return "ERROR: syntax error in DESCRIBE".to_string(),
        };
        if let Err(e) = self.check_table(&name) {
            return e;
        }
        let mut out = String::from("Field | Type");
        for c in &self.columns {
            out.push('\n');
            out.push_str(c);
            out.push_str(" | text");
        }
        out
    }

    fn run_select(&self, tokens: &[Token]) -> String {
        let from = match tokens.iter().position(|t| is_keyword(t, "FROM")) {
            Some(i) => i,
            None => return "ERROR: syntax error, SELECT without FROM".to_string(),
        };
        let table = match tokens.get(from + 1) {
            Some(Token::Word(w)) => w.clone(),
            _ => return "ERROR: syntax error after FROM".to_string(),
        };
        if let Err(e) = self.check_table(&table) {
            return e;
        }
        let mut selected: Vec<usize> = Vec::new();
        if tokens[..from].contains(&Token::Star) {
            selected = (0..self.columns.len()).collect();
        } else {
            for t in &tokens[..from] {
                match t {
                    Token::Comma => {}
                    Token::Word(w) | Token::Text(w) => match self.column_index(w) {
                        Some(i) => selected.push(i),
                        None => {
                            return format!(
                                "ERROR 1054 (42S22): Unknown column '{w}' in 'field list'"
                            )
                        }
                    },
                    _ => return "ERROR: syntax error in the field list".to_string(),
                }
            }
        }
        if selected.is_empty() {
            return "ERROR: syntax error, empty field list".to_string();
        }
        let tail = tokens.get(from + 2..).unwrap_or(&[]);
        let condition = match self.parse_condition(tail) {
            Ok(c) => c,
            Err(e) => return e,
        };
        let mut out: Vec<Vec<String>> = Vec::new();
        for row in &self.rows {
            let keep = condition
                .as_ref()
                .map_or(true, |c| values_equal(&row[c.column], &c.value));
            if keep {
                out.push(selected.iter().map(|&i| row[i].clone()).collect());
            }
        }
        serde_json::to_string(&out).expect("string matrix serializes")
    }

    fn run_update(&mut self, tokens: &[Token]) -> String {
        let table = match tokens.first() {
            Some(Token::Word(w)) => w.clone(),
            _ => return "ERROR: syntax error in UPDATE".to_string(),
        };
        if let Err(e) = self.check_table(&table) {
            return e;
        }
        if !tokens.get(1).is_some_and(|t| is_keyword(t, "SET")) {
            return "ERROR: syntax error, UPDATE without SET".to_string();
        }
        let column = match tokens.get(2) {
            Some(Token::Word(w)) => w.clone(),
            _ => return "ERROR: syntax error in the SET clause".to_string(),
        };
        if !matches!(tokens.get(3), Some(Token::Equals)) {
            return "ERROR: syntax error in the SET clause".to_string();
        }
        let value = match tokens.get(4) {
            Some(Token::Word(w)) => w.clone(),
            Some(Token::Text(t)) => t.clone(),
            _ => return "ERROR: syntax error in the SET clause".to_string(),
        };
        let set_column = match self.column_index(&column) {
            Some(i) => i,
            None => return format!("ERROR 1054 (42S22): Unknown column '{column}' in 'field list'"),
        };
        let condition = match self.parse_condition(&tokens[5..]) {
            Ok(c) => c,
            Err(e) => return e,
        };
        let mut affected = 0;
        for row in &mut self.rows {
            let hit = condition
                .as_ref()
                .map_or(true, |c| values_equal(&row[c.column], &c.value));
            if hit && row[set_column] != value {
                row[set_column] = value.clone();
                affected += 1;
            }
        }
        format!("Query OK, {affected} row(s) affected")
    }

    fn run_sql(&mut self, statement: &str) -> String {
        let tokens = match tokenize(statement) {
            Ok(t) => t,
            Err(e) => return format!("ERROR: {e}"),
        };
        let Some(head) = tokens.first() else {
            return "ERROR: empty statement".to_string();
        };
        if is_keyword(head, "DESCRIBE") || is_keyword(head, "DESC") {
            self.run_describe(&tokens[1..])
        } else if is_keyword(head, "SHOW") {
            // SHOW COLUMNS FROM t
            match tokens.get(3) {
                Some(Token::Word(_)) => self.run_describe(&tokens[3..]),
                _ => "ERROR: syntax error in SHOW".to_string(),
            }
        } else if is_keyword(head, "SELECT") {
            self.run_select(&tokens[1..])
        } else if is_keyword(head, "UPDATE") {
            self.run_update(&tokens[1..])
        } else {
            "ERROR: unsupported statement".to_string()
        }
    }

    fn submit(&mut self, payload: &str) -> String {
        self.done = true;
        let mut given: Vec<String> = match serde_json::from_str::<serde_json::Value>(payload) {
            Ok(serde_json::Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect(),
            Ok(serde_json::Value::String(s)) => vec![s],
            Ok(other) => vec![other.to_string()],
            Err(_) => vec![payload.trim().to_string()],
        };
        let mut expected = self.answer.clone();
        given.sort_unstable();
        expected.sort_unstable();
        self.succeeded = given == expected;
        format!("Answer submitted: {}", payload.trim())
    }
}

impl TaskEnv for TableEnv {
    fn task_id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> EnvFamily {
        EnvFamily::Db
    }

    fn max_turns(&self) -> usize {
        self.max_turns
    }

    fn initial_observation(&self) -> String {
        self.o0.clone()
    }

    fn step(&mut self, action: &str) -> EnvOutcome {
        if self.done {
            return EnvOutcome {
                observation: "The session is over.".into(),
                done: true,
                score: self.partial_score(),
            };
        }
        let observation = match action.trim().strip_prefix("Answer:") {
            Some(payload) => self.submit(payload.trim()),
            None => self.run_sql(action),
        };
        EnvOutcome { observation, done: self.done, score: self.partial_score() }
    }

    fn partial_score(&self) -> f64 {
        if self.succeeded {
            1.0
        } else {
            0.0
        }
    }

    fn available_actions(&self) -> Option<String> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::FamilyParams;

    fn spec() -> TaskSpec {
        TaskSpec {
            id: "db/test".into(),
            family: EnvFamily::Db,
            goal: "In which city is the shop named Lotus located?".into(),
            description: "Table shops with columns: Shop ID, Shop Name, City.".into(),
            max_turns: None,
            oracle: vec![
                "DESCRIBE shops".into(),
                "SELECT city FROM shops WHERE shop_name = 'Lotus'".into(),
                "Answer: [\"Shanghai\"]".into(),
            ],
            example: String::new(),
            params: FamilyParams::Db(params()),
        }
    }

    fn params() -> TableParams {
        TableParams {
            table: "shops".into(),
            columns: vec!["shop_id".into(), "shop_name".into(), "city".into()],
            rows: vec![
                vec!["1".into(), "Lotus".into(), "Shanghai".into()],
                vec!["2".into(), "Aster".into(), "Beijing".into()],
            ],
            answer: vec!["Shanghai".into()],
        }
    }

    fn env() -> TableEnv {
        let s = spec();
        let FamilyParams::Db(p) = s.params.clone() else { unreachable!() };
        TableEnv::new(&s, p)
    }

    #[test]
    fn display_name_columns_error_until_described() {
        let mut e = env();
        let err = e.step("SELECT city FROM shops WHERE `Shop Name` = 'Lotus'");
        assert_eq!(
            err.observation,
            "ERROR 1054 (42S22): Unknown column 'Shop Name' in 'where clause'"
        );
        assert!(!err.done);
        let described = e.step("DESCRIBE shops");
        assert!(described.observation.contains("shop_name"));
        let rows = e.step("SELECT city FROM shops WHERE shop_name = 'Lotus'");
        assert_eq!(rows.observation, "[[\"Shanghai\"]]");
    }

    #[test]
    fn select_star_and_unfiltered_queries_work() {
        let mut e = env();
        let all = e.step("SELECT * FROM shops");
        assert_eq!(
            all.observation,
            "[[\"1\",\"Lotus\",\"Shanghai\"],[\"2\",\"Aster\",\"Beijing\"]]"
        );
        let cities = e.step("SELECT city FROM shops");
        assert_eq!(cities.observation, "[[\"Shanghai\"],[\"Beijing\"]]");
    }

    #[test]
    fn numeric_values_compare_numerically() {
        let mut e = env();
        let hit = e.step("SELECT shop_name FROM shops WHERE shop_id = 2");
        assert_eq!(hit.observation, "[[\"Aster\"]]");
        let quoted = e.step("SELECT shop_name FROM shops WHERE shop_id = '2'");
        assert_eq!(quoted.observation, "[[\"Aster\"]]");
    }

    #[test]
    fn update_reports_affected_rows_and_mutates() {
        let mut e = env();
        let res = e.step("UPDATE shops SET city = 'Suzhou' WHERE shop_name = 'Aster'");
        assert_eq!(res.observation, "Query OK, 1 row(s) affected");
        let rows = e.step("SELECT city FROM shops WHERE shop_name = 'Aster'");
        assert_eq!(rows.observation, "[[\"Suzhou\"]]");
        let again = e.step("UPDATE shops SET city = 'Suzhou' WHERE shop_name = 'Aster'");
        assert_eq!(again.observation, "Query OK, 0 row(s) affected");
    }

    #[test]
    fn unknown_table_is_a_typed_error() {
        let mut e = env();
        let out = e.step("SELECT * FROM warehouses");
        assert_eq!(out.observation, "ERROR 1146 (42S02): Table 'warehouses' doesn't exist");
    }

    #[test]
    fn answers_compare_as_multisets() {
        let mut e = env();
        let out = e.step("Answer: [\"Shanghai\"]");
        assert!(out.done);
        assert_eq!(out.score, 1.0);

        let mut wrong = env();
        let out = wrong.step("Answer: [\"Beijing\"]");
        assert!(out.done);
        assert_eq!(out.score, 0.0);

        let mut multi = env();
        multi.answer = vec!["Beijing".into(), "Shanghai".into()];
        let out = multi.step("Answer: [\"Shanghai\", \"Beijing\"]");
        assert_eq!(out.score, 1.0);
    }

    #[test]
    fn the_oracle_solves_the_task() {
        let mut e = env();
        let mut score = 0.0;
        for a in spec().oracle {
            let out = e.step(&a);
            if out.done {
                score = out.score;
            }
        }
        assert_eq!(score, 1.0);
    }

    #[test]
    fn bare_answers_without_json_still_compare() {
        let mut e = env();
        let out = e.step("Answer: Shanghai");
        assert!(out.done);
        assert_eq!(out.score, 1.0);
    }
}
