//! Line-oriented OCR token files.
//!
//! ```text
//! PAGE <id> <width> <height>
//! <text> <x_min> <y_min> <x_max> <y_max>
//! ```
//!
//! Spaces inside token text are written as `\s`, backslashes as `\\`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::{BBox, Token};
use crate::error::{Error, Result};

/// Tokens of one page as read from a token file.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub tokens: Vec<Token>,
    /// Tokens dropped because their clipped box was empty or their text blank.
    pub dropped: usize,
}

pub fn parse_token_file(path: &Path) -> Result<Vec<TokenPage>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_token_str(&text, &path.display().to_string())
}

pub fn parse_token_str(text: &str, source_name: &str) -> Result<Vec<TokenPage>> {
    let mut pages: Vec<TokenPage> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(source_name, lineno, msg);
        if fields.len() == 4 && fields[0] == "PAGE" {
            let id = fields[1].to_string();
            let dim = |s: &str, what: &str| -> Result<u32> {
                let v: i64 = s
                    .parse()
                    .map_err(|_| err(format!("page {what} `{s}` is not an integer")))?;
                if v <= 0 {
                    return Err(err(format!("page {what} must be positive, got {v}")));
                }
                u32::try_from(v).map_err(|_| err(format!("page {what} {v} too large")))
            };
            let width = dim(fields[2], "width")?;
            let height = dim(fields[3], "height")?;
            if !seen.insert(id.clone()) {
                return Err(err(format!("duplicate page id `{id}`")));
            }
            pages.push(TokenPage {
                id,
                width,
                height,
                tokens: Vec::new(),
                dropped: 0,
            });
            continue;
        }
        if fields.len() != 5 {
            return Err(err(format!(
                "expected `<text> <x_min> <y_min> <x_max> <y_max>`, found {} fields",
                fields.len()
            )));
        }
        let page = pages
            .last_mut()
            .ok_or_else(|| err("token before any PAGE header".into()))?;
        let text = unescape(fields[0]).map_err(&err)?;
        let mut coords = [0i64; 4];
        for (c, f) in coords.iter_mut().zip(&fields[1..]) {
            *c = f
                .parse()
                .map_err(|_| err(format!("coordinate `{f}` is not an integer")))?;
        }
        let [x0, y0, x1, y1] = coords;
        match BBox::clipped(x0, y0, x1, y1, page.width, page.height) {
            Some(bbox) if !text.trim().is_empty() => {
                let index = page.tokens.len();
                page.tokens.push(Token { text, bbox, index });
            }
            _ => page.dropped += 1,
        }
    }
    for p in pages.iter().filter(|p| p.dropped > 0) {
        warn!(
            "page {}: dropped {} token(s) with empty box or text",
            p.id, p.dropped
        );
    }
    Ok(pages)
}

fn unescape(field: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(o) => return Err(format!("unknown escape `\\{o}` in `{field}`")),
            None => return Err(format!("dangling backslash in `{field}`")),
        }
    }
    Ok(out)
}

pub fn escape_token_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\\' => out.push_str("\\\\"),
            c if c.is_whitespace() => out.push_str("\\s"),
            c => out.push(c),
        }
    }
    out
}

pub fn write_token_file(path: &Path, pages: &[TokenPage]) -> Result<()> {
    let mut s = String::new();
    for p in pages {
        let _ = writeln!(s, "PAGE {} {} {}", p.id, p.width, p.height);
        for t in &p.tokens {
            let b = t.bbox;
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                escape_token_text(&t.text),
                b.x_min,
                b.y_min,
                b.x_max,
                b.y_max
            );
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example_token() {
        let pages = parse_token_str("PAGE p1 600 400\ntemps 10 195 40 300\n", "t").unwrap();
        assert_eq!(pages.len(), 1);
        assert_eq!(
            pages[0].tokens,
            vec![Token {
                text: "temps".into(),
                bbox: BBox::new(10, 195, 40, 300),
                index: 0
            }]
        );
    }

    #[test]
    fn empty_page_is_registered() {
        let pages = parse_token_str("PAGE empty 10 10\n", "t").unwrap();
        assert_eq!(pages.len(), 1);
        assert!(pages[0].tokens.is_empty());
        assert!(parse_token_str("", "t").unwrap().is_empty());
    }

    #[test]
    fn clips_against_scalar_clamp() {
        let pages = parse_token_str("PAGE p 100 100\nx -5 10 20 30\n", "t").unwrap();
        assert_eq!(pages[0].tokens[0].bbox, BBox::new(0, 10, 20, 30));
        // clamp oracle over a sweep of raw coordinates
        for raw in -20i64..130 {
            let want = raw.clamp(0, 100) as u32;
            let b = BBox::clipped(raw, 0, 200, 50, 100, 100);
            if want < 100 {
                assert_eq!(b.unwrap().x_min, want);
            } else {
                assert!(b.is_none());
            }
        }
    }

    #[test]
    fn drops_empty_boxes_and_counts_them() {
        let src = "PAGE p 50 50\na 60 0 70 10\nb 0 0 10 10\nc 10 10 10 20\n";
        let pages = parse_token_str(src, "t").unwrap();
        assert_eq!(pages[0].tokens.len(), 1);
        assert_eq!(pages[0].tokens[0].index, 0);
        assert_eq!(pages[0].dropped, 2);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_token_str("PAGE p 50 50\nok 0 0 1 1\nbad 0 0 1\n", "f.tok").unwrap_err();
        assert!(e.to_string().starts_with("f.tok:3:"), "{e}");
        let e = parse_token_str("PAGE p -5 50\n", "f").unwrap_err();
        assert!(e.to_string().contains("positive"), "{e}");
        let e = parse_token_str("PAGE p 5 5\nPAGE p 6 6\n", "f").unwrap_err();
        assert!(e.to_string().contains("duplicate"), "{e}");
        let e = parse_token_str("tok 0 0 1 1\n", "f").unwrap_err();
        assert!(e.to_string().contains("before any PAGE"), "{e}");
    }

    #[test]
    fn escapes_round_trip() {
        let texts = ["a b", "back\\slash", "PAGE", "tab\there"];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tok");
        let tokens = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Token {
                text: t.to_string(),
                bbox: BBox::new(0, 0, 1 + i as u32, 2),
                index: i,
            })
            .collect();
        let page = TokenPage {
            id: "p".into(),
            width: 10,
            height: 10,
            tokens,
            dropped: 0,
        };
        write_token_file(&path, std::slice::from_ref(&page)).unwrap();
        let back = parse_token_file(&path).unwrap();
        assert_eq!(back, vec![page]);
    }
}
