//! Key names and characters to X11 keysyms.

use std::sync::OnceLock;

use super::ActionError;

pub const XK_SHIFT_L: u32 = 0xFFE1;
pub const XK_CONTROL_L: u32 = 0xFFE3;
pub const XK_ALT_L: u32 = 0xFFE9;
pub const XK_SUPER_L: u32 = 0xFFEB;
pub const XK_RETURN: u32 = 0xFF0D;
pub const XK_TAB: u32 = 0xFF09;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeymapEntry {
    pub name: String,
    pub keysym: u32,
    /// Modifier a US layout needs to produce this symbol. Informational only:
    /// typed text sends case-carrying keysyms and never synthesises Shift.
    pub needs_modifier: Option<u32>,
}

const NAMED: &[(&str, u32)] = &[
    ("backspace", 0xFF08),
    ("tab", XK_TAB),
    ("enter", XK_RETURN),
    ("return", XK_RETURN),
    ("escape", 0xFF1B),
    ("esc", 0xFF1B),
    ("delete", 0xFFFF),
    ("del", 0xFFFF),
    ("insert", 0xFF63),
    ("ins", 0xFF63),
    ("home", 0xFF50),
    ("end", 0xFF57),
    ("left", 0xFF51),
    ("up", 0xFF52),
    ("right", 0xFF53),
    ("down", 0xFF54),
    ("pageup", 0xFF55),
    ("page_up", 0xFF55),
    ("pagedown", 0xFF56),
    ("page_down", 0xFF56),
    ("menu", 0xFF67),
    ("print", 0xFF61),
    ("printscreen", 0xFF61),
    ("pause", 0xFF13),
    ("scrolllock", 0xFF14),
    ("scroll_lock", 0xFF14),
    ("numlock", 0xFF7F),
    ("num_lock", 0xFF7F),
    ("capslock", 0xFFE5),
    ("caps_lock", 0xFFE5),
    ("space", 0x0020),
    ("shift", XK_SHIFT_L),
    ("shift_l", XK_SHIFT_L),
    ("shift_r", 0xFFE2),
    ("ctrl", XK_CONTROL_L),
    ("control", XK_CONTROL_L),
    ("ctrl_l", XK_CONTROL_L),
    ("control_l", XK_CONTROL_L),
    ("ctrl_r", 0xFFE4),
    ("control_r", 0xFFE4),
    ("meta", 0xFFE7),
    ("meta_l", 0xFFE7),
    ("meta_r", 0xFFE8),
    ("alt", XK_ALT_L),
    ("alt_l", XK_ALT_L),
    ("alt_r", 0xFFEA),
    ("option", XK_ALT_L),
    ("super", XK_SUPER_L),
    ("super_l", XK_SUPER_L),
    ("super_r", 0xFFEC),
    ("win", XK_SUPER_L),
    ("cmd", XK_SUPER_L),
    ("command", XK_SUPER_L),
    ("f1", 0xFFBE),
    ("f2", 0xFFBF),
    ("f3", 0xFFC0),
    ("f4", 0xFFC1),
    ("f5", 0xFFC2),
    ("f6", 0xFFC3),
    ("f7", 0xFFC4),
    ("f8", 0xFFC5),
    ("f9", 0xFFC6),
    ("f10", 0xFFC7),
    ("f11", 0xFFC8),
    ("f12", 0xFFC9),
];

const SHIFTED_SYMBOLS: &str = "~!@#$%^&*()_+{}|:\"<>?";

/// Full table: named keys, then one entry per printable ASCII character.
pub fn keymap() -> &'static [KeymapEntry] {
    static TABLE: OnceLock<Vec<KeymapEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table: Vec<KeymapEntry> = NAMED
            .iter()
            .map(|&(name, keysym)| KeymapEntry {
                name: name.to_string(),
                keysym,
                needs_modifier: None,
            })
            .collect();
        for c in ' '..='~' {
            let shifted = c.is_ascii_uppercase() || SHIFTED_SYMBOLS.contains(c);
            table.push(KeymapEntry {
                name: c.to_string(),
                keysym: c as u32,
                needs_modifier: shifted.then_some(XK_SHIFT_L),
            });
        }
        table
    })
}

/// Keysym for one character of typed text.
pub fn char_to_keysym(c: char) -> Result<u32, ActionError> {
    match c {
        '\n' | '\r' => Ok(XK_RETURN),
        '\t' => Ok(XK_TAB),
        ' '..='~' => Ok(c as u32),
        // Latin-1 keysyms coincide with their code points.
        '\u{A0}'..='\u{FF}' => Ok(c as u32),
        _ => Err(ActionError::UnmappedCharacter(c.to_string())),
    }
}

/// Named keys match case-insensitively; a single character maps to its own keysym.
pub fn key_name_to_keysym(name: &str) -> Result<u32, ActionError> {
    let mut chars = name.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return char_to_keysym(c);
    }
    let lower = name.to_ascii_lowercase();
    NAMED
        .iter()
        .find(|(n, _)| *n == lower)
        .map(|&(_, k)| k)
        .ok_or_else(|| ActionError::UnmappedCharacter(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn named_lookups() {
        assert_eq!(key_name_to_keysym("enter").unwrap(), 0xFF0D);
        assert_eq!(key_name_to_keysym("ENTER").unwrap(), 0xFF0D);
        assert_eq!(key_name_to_keysym("Ctrl").unwrap(), 0xFFE3);
        assert_eq!(key_name_to_keysym("F12").unwrap(), 0xFFC9);
        assert_eq!(key_name_to_keysym("space").unwrap(), 0x20);
    }

    #[test]
    fn single_characters() {
        assert_eq!(key_name_to_keysym("a").unwrap(), 0x61);
        assert_eq!(key_name_to_keysym("A").unwrap(), 0x41);
        assert_eq!(key_name_to_keysym("s").unwrap(), 0x73);
        assert_eq!(key_name_to_keysym("é").unwrap(), 0xE9);
    }

    #[test]
    fn unmapped() {
        assert!(matches!(
            key_name_to_keysym("☃"),
            Err(ActionError::UnmappedCharacter(s)) if s == "☃"
        ));
        assert!(key_name_to_keysym("hyperdrive").is_err());
        assert!(key_name_to_keysym("").is_err());
    }

    #[test]
    fn every_printable_ascii_has_an_entry() {
        let table = keymap();
        for c in ' '..='~' {
            let e = table.iter().find(|e| e.name == c.to_string()).unwrap();
            assert_eq!(e.keysym, c as u32);
        }
        assert_eq!(
            table.iter().find(|e| e.name == "A").unwrap().needs_modifier,
            Some(XK_SHIFT_L)
        );
        assert_eq!(table.iter().find(|e| e.name == "a").unwrap().needs_modifier, None);
    }

    #[test]
    fn named_keys_unique_ignoring_case() {
        let mut seen = HashSet::new();
        for e in keymap().iter().filter(|e| e.name.chars().count() > 1) {
            assert!(seen.insert(e.name.to_ascii_lowercase()), "duplicate {}", e.name);
        }
    }
}
