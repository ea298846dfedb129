use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MemError;
use crate::env::NUM_COMMANDS;
use crate::lexicon::tokenize;

pub const ORIGINAL_COMMANDS_JSON: &str = include_str!("../../data/original_commands.json");
pub const ALTERNATE_COMMANDS_JSON: &str = include_str!("../../data/alternate_commands.json");

/// One natural-language command. `id` matches the detector's command index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub id: usize,
    pub text: String,
}

impl CommandSpec {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

/// An ordered list of commands, one per detector, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSet {
    commands: Vec<CommandSpec>,
}

impl CommandSet {
    pub fn from_json(text: &str) -> Result<Self, MemError> {
        let mut commands: Vec<CommandSpec> =
            serde_json::from_str(text).map_err(|e| MemError::Commands(e.to_string()))?;
        commands.sort_by_key(|c| c.id);
        let ids: Vec<usize> = commands.iter().map(|c| c.id).collect();
        if ids != (0..NUM_COMMANDS).collect::<Vec<_>>() {
            return Err(MemError::Commands(format!("command ids must be 0..{NUM_COMMANDS}, got {ids:?}")));
        }
        if let Some(c) = commands.iter().find(|c| c.tokens().is_empty()) {
            return Err(MemError::Commands(format!("command {} has no tokens", c.id)));
        }
        Ok(Self { commands })
    }

    pub fn load(path: &Path) -> Result<Self, MemError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn original() -> Self {
        Self::from_json(ORIGINAL_COMMANDS_JSON).expect("bundled command set is valid")
    }

    pub fn alternate() -> Self {
        Self::from_json(ALTERNATE_COMMANDS_JSON).expect("bundled command set is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.commands).expect("serializable")
    }

    pub fn commands(&self) -> &[CommandSpec] {
        &self.commands
    }

    pub fn get(&self, id: usize) -> &CommandSpec {
        &self.commands[id]
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.commands.iter().map(|c| c.text.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sets_align_by_id() {
        let (o, a) = (CommandSet::original(), CommandSet::alternate());
        assert_eq!(o.get(1).text, "build a supply depot");
        assert_eq!(a.get(0).text, "choose a worker unit");
        for (x, y) in o.commands().iter().zip(a.commands()) {
            assert_eq!(x.id, y.id);
        }
    }

    #[test]
    fn rejects_missing_ids_and_empty_text() {
        assert!(CommandSet::from_json(r#"[{"id":0,"text":"a"}]"#).is_err());
        let mut v: Vec<CommandSpec> = CommandSet::original().commands().to_vec();
        v[2].text = "?!".into();
        assert!(CommandSet::from_json(&serde_json::to_string(&v).unwrap()).is_err());
    }
}
