//! Virtual shell over an immutable file tree. A small command set covers the
//! shipped tasks; episodes end with `answer(...)` or `finish`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvOutcome, TaskEnv, TaskSpec};
use crate::types::EnvFamily;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    /// Absolute path.
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShellParams {
    pub files: Vec<FileEntry>,
    /// Expected `answer(...)` payload; empty means `finish` alone succeeds.
    #[serde(default)]
    pub answer: String,
}

pub struct ShellEnv {
    id: String,
    max_turns: usize,
    o0: String,
    files: BTreeMap<String, String>,
    answer: String,
    done: bool,
    succeeded: bool,
}

fn normalize_path(path: &str) -> String {
    let mut p = if path.starts_with('/') { path.to_string() } else { format!("/{path}") };
    while p.len() > 1 && p.ends_with('/') {
        p.pop();
    }
    p
}

fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Glob with `*` as "any run of characters".
fn glob_match(pattern: &str, name: &str) -> bool {
    fn inner(p: &[u8], n: &[u8]) -> bool {
        match p.first() {
            None => n.is_empty(),
            Some(b'*') => {
                (0..=n.len()).any(|k| inner(&p[1..], &n[k..]))
            }
            Some(c) => n.first() == Some(c) && inner(&p[1..], &n[1..]),
        }
    }
    inner(pattern.as_bytes(), name.as_bytes())
}

fn strip_quotes(text: &str) -> &str {
    let t = text.trim();
    for q in ['"', '\''] {
        if t.len() >= 2 && t.starts_with(q) && t.ends_with(q) {
            return &t[1..t.len() - 1];
        }
    }
    t
}

impl ShellEnv {
    pub fn new(spec: &TaskSpec, params: ShellParams) -> Self {
        ShellEnv {
            id: spec.id.clone(),
            max_turns: spec.max_turns(),
            o0: spec.initial_observation(),
            files: params
                .files
                .into_iter()
                .map(|f| (normalize_path(&f.path), f.content))
                .collect(),
            answer: params.answer,
            done: false,
            succeeded: false,
        }
    }

    fn dir_exists(&self, dir: &str) -> bool {
        if dir == "/" {
            return true;
        }
        let prefix = format!("{dir}/");
        self.files.keys().any(|p| p.starts_with(&prefix))
    }

    /// Immediate children of `dir`: (name, is_dir), sorted by name.
    fn children(&self, dir: &str) -> Vec<(String, bool)> {
        let prefix = if dir == "/" { "/".to_string() } else { format!("{dir}/") };
        let mut out: BTreeMap<String, bool> = BTreeMap::new();
        for path in self.files.keys() {
            if let Some(rest) = path.strip_prefix(&prefix) {
                match rest.split_once('/') {
                    Some((head, _)) => out.insert(head.to_string(), true),
                    None => out.insert(rest.to_string(), false),
                };
            }
        }
        out.into_iter().collect()
    }

    fn run_ls(&self, args: &[&str]) -> String {
        let all = args.contains(&"-a");
        let path_arg = args.iter().find(|a| !a.starts_with('-'));
        let path = normalize_path(path_arg.unwrap_or(&"/"));
        if self.files.contains_key(&path) {
            return path;
        }
        if !self.dir_exists(&path) {
            return format!("ls: cannot access '{path}': No such file or directory");
        }
        let names: Vec<String> = self
            .children(&path)
            .into_iter()
            .map(|(name, _)| name)
            .filter(|name| all || !name.starts_with('.'))
            .collect();
        if names.is_empty() {
            "(no output)".to_string()
        } else {
            names.join("\n")
        }
    }

    fn run_cat(&self, args: &[&str]) -> String {
        let Some(path_arg) = args.first() else {
            return "cat: missing operand".to_string();
        };
        let path = normalize_path(path_arg);
        match self.files.get(&path) {
            Some(content) => content.clone(),
            None => format!("cat: {path}: No such file or directory"),
        }
    }

    fn run_wc(&self, args: &[&str]) -> String {
        let lines_mode = args.first() == Some(&"-l");
        let Some(path_arg) = args.iter().find(|a| !a.starts_with('-')) else {
            return "wc: missing operand".to_string();
        };
        let path = normalize_path(path_arg);
        match self.files.get(&path) {
            Some(content) if lines_mode => format!("{} {path}", content.lines().count()),
            Some(content) => format!(
                "{} {} {} {path}",
                content.lines().count(),
                content.split_whitespace().count(),
                content.len()
            ),
            None => format!("wc: {path}: No such file or directory"),
        }
    }

    fn run_find(&self, args: &[&str]) -> String {
        let root = normalize_path(args.first().filter(|a| !a.starts_with('-')).unwrap_or(&"/"));
        let pattern = args
            .iter()
            .position(|a| *a == "-name")
            .and_then(|i| args.get(i + 1))
            .map(|p| strip_quotes(p).to_string());
        if !self.dir_exists(&root) && !self.files.contains_key(&root) {
            return format!("find: '{root}': No such file or directory");
        }
        let prefix = if root == "/" { "/".to_string() } else { format!("{root}/") };
        let mut hits: Vec<&str> = self
            .files
            .keys()
            .filter(|p| **p == root || p.starts_with(&prefix))
            .filter(|p| pattern.as_deref().map_or(true, |pat| glob_match(pat, basename(p))))
            .map(String::as_str)
            .collect();
        hits.sort_unstable();
        if hits.is_empty() {
            "(no output)".to_string()
        } else {
            hits.join("\n")
        }
    }

    fn run_line(&mut self, line: &str) -> Option<String> {
        let line = line.trim();
        if line.is_empty() {
            return None;
        }
        if line == "finish" {
            self.done = true;
            self.succeeded = self.answer.is_empty();
            return Some(if self.succeeded { "Task finished." } else { "Task finished without an answer." }.to_string());
        }
        if let Some(rest) = line.strip_prefix("answer(") {
            let payload = strip_quotes(rest.strip_suffix(')').unwrap_or(rest));
            self.done = true;
            self.succeeded = !self.answer.is_empty() && payload == self.answer;
            return Some(format!("Answer submitted: {payload}"));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (cmd, args) = fields.split_first().expect("line is non-empty");
        Some(match *cmd {
            "ls" => self.run_ls(args),
            "cat" => self.run_cat(args),
            "wc" => self.run_wc(args),
            "find" => self.run_find(args),
            "echo" => strip_quotes(&args.join(" ")).to_string(),
            "pwd" => "/".to_string(),
            other => format!("bash: {other}: command not found"),
        })
    }
}

impl TaskEnv for ShellEnv {
    fn task_id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> EnvFamily {
        EnvFamily::Os
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
        let mut outputs = Vec::new();
        for line in action.lines() {
            if let Some(out) = self.run_line(line) {
                outputs.push(out);
            }
            if self.done {
                break;
            }
        }
        let observation = if outputs.is_empty() { "(no output)".to_string() } else { outputs.join("\n") };
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
            id: "os/test".into(),
            family: EnvFamily::Os,
            goal: "Count the files in /data, hidden ones included. Submit with answer(N).".into(),
            description: String::new(),
            max_turns: None,
            oracle: vec!["ls -a /data".into(), "answer(4)".into()],
            example: String::new(),
            params: FamilyParams::Os(params()),
        }
    }

    fn params() -> ShellParams {
        ShellParams {
            files: vec![
                FileEntry { path: "/data/a.txt".into(), content: "alpha".into() },
                FileEntry { path: "/data/b.txt".into(), content: "b1\nb2\nb3".into() },
                FileEntry { path: "/data/c.log".into(), content: "c".into() },
                FileEntry { path: "/data/.secret".into(), content: "hidden".into() },
                FileEntry { path: "/notes/Readme.txt".into(), content: "The color is blue.".into() },
            ],
            answer: "4".into(),
        }
    }

    fn env() -> ShellEnv {
        let s = spec();
        let FamilyParams::Os(p) = s.params.clone() else { unreachable!() };
        ShellEnv::new(&s, p)
    }

    #[test]
    fn ls_hides_dotfiles_without_dash_a() {
        let mut e = env();
        assert_eq!(e.step("ls /data").observation, "a.txt\nb.txt\nc.log");
        assert_eq!(e.step("ls -a /data").observation, ".secret\na.txt\nb.txt\nc.log");
    }

    #[test]
    fn cat_is_case_sensitive() {
        let mut e = env();
        assert!(e.step("cat /notes/readme.txt").observation.contains("No such file"));
        assert_eq!(e.step("cat /notes/Readme.txt").observation, "The color is blue.");
    }

    #[test]
    fn wc_counts_lines() {
        let mut e = env();
        assert_eq!(e.step("wc -l /data/b.txt").observation, "3 /data/b.txt");
    }

    #[test]
    fn find_filters_by_glob() {
        let mut e = env();
        assert_eq!(e.step("find /data -name \"*.txt\"").observation, "/data/a.txt\n/data/b.txt");
        assert_eq!(
            e.step("find / -name *.log").observation,
            "/data/c.log"
        );
    }

    #[test]
    fn correct_answer_ends_with_full_score() {
        let mut e = env();
        let out = e.step("answer(4)");
        assert!(out.done);
        assert_eq!(out.score, 1.0);
    }

    #[test]
    fn wrong_answer_ends_with_zero() {
        let mut e = env();
        let out = e.step("answer(3)");
        assert!(out.done);
        assert_eq!(out.score, 0.0);
    }

    #[test]
    fn multi_line_scripts_run_in_order() {
        let mut e = env();
        let out = e.step("ls /data\nwc -l /data/b.txt");
        assert_eq!(out.observation, "a.txt\nb.txt\nc.log\n3 /data/b.txt");
    }

    #[test]
    fn unknown_commands_and_paths_error_cleanly() {
        let mut e = env();
        assert!(e.step("rm -rf /").observation.contains("command not found"));
        assert!(e.step("ls /nowhere").observation.contains("No such file"));
        assert_eq!(e.step("echo 'hi there'").observation, "hi there");
    }

    #[test]
    fn the_oracle_solves_the_task() {
        let mut e = env();
        let mut final_score = 0.0;
        for a in spec().oracle {
            let out = e.step(&a);
            if out.done {
                final_score = out.score;
            }
        }
        assert_eq!(final_score, 1.0);
    }
}
