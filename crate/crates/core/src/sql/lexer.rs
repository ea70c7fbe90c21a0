use super::SqlError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Number(i64),
    Str(String),
    Placeholder(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Semi,
    Op(&'static str),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub offset: usize,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, message: String| SqlError::Parse { offset, message };
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' || c == '`' {
            if c == '`' {
                let end = text[i + 1..]
                    .find('`')
                    .ok_or_else(|| err(i, "unterminated quoted identifier".into()))?;
                let name = text[i + 1..i + 1 + end].to_string();
                i += end + 2;
                Tok::Ident(name)
            } else {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_string())
            }
        } else if c.is_ascii_digit()
            || (c == '-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
        {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = text[start..i]
                .parse()
                .map_err(|_| err(start, format!("integer out of range: {}", &text[start..i])))?;
            Tok::Number(n)
        } else if c == '\'' || c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match bytes.get(i) {
                    None => return Err(err(start, "unterminated string literal".into())),
                    Some(&b) if b as char == c => {
                        // doubled quote escapes itself
                        if bytes.get(i + 1) == Some(&b) {
                            s.push(c);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(_) => {
                        let ch = text[i..].chars().next().unwrap();
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            Tok::Str(s)
        } else if c == ':' || c == '#' {
            // `:name` and MyBatis-style `#{name}`
            if c == '#' {
                if bytes.get(i + 1) != Some(&b'{') {
                    return Err(err(i, "expected `{` after `#`".into()));
                }
                let end = text[i..]
                    .find('}')
                    .ok_or_else(|| err(i, "unterminated `#{` placeholder".into()))?;
                let name = text[i + 2..i + end].trim().to_string();
                if name.is_empty() {
                    return Err(err(i, "empty placeholder".into()));
                }
                i += end + 1;
                Tok::Placeholder(name)
            } else {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                if i == start + 1 {
                    return Err(err(start, "empty placeholder".into()));
                }
                Tok::Placeholder(text[start + 1..i].to_string())
            }
        } else {
            i += 1;
            match c {
                ',' => Tok::Comma,
                '.' => Tok::Dot,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '*' => Tok::Star,
                ';' => Tok::Semi,
                '=' => Tok::Op("="),
                '<' => match bytes.get(i) {
                    Some(b'=') => {
                        i += 1;
                        Tok::Op("<=")
                    }
                    Some(b'>') => {
                        i += 1;
                        Tok::Op("<>")
                    }
                    _ => Tok::Op("<"),
                },
                '>' => {
                    if bytes.get(i) == Some(&b'=') {
                        i += 1;
                        Tok::Op(">=")
                    } else {
                        Tok::Op(">")
                    }
                }
                '!' if bytes.get(i) == Some(&b'=') => {
                    i += 1;
                    Tok::Op("<>")
                }
                other => return Err(err(start, format!("unexpected character `{other}`"))),
            }
        };
        out.push(Token { tok, offset: start });
    }
    Ok(out)
}
