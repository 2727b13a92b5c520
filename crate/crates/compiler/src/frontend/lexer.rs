use crate::span::{Diagnostic, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Int32(i32),
    Float(f64),
    Float32(f32),
    // keywords
    Function,
    End,
    If,
    Elseif,
    Else,
    While,
    For,
    Return,
    Record,
    Mutable,
    True,
    False,
    // punctuation
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Dot,
    ColonColon,
    Colon,
    Assign,
    Op(&'static str),
    Not,
    Semi,
    Newline,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Int32(v) => format!("integer `{v}i32`"),
            Tok::Float(v) => format!("float `{v}`"),
            Tok::Float32(v) => format!("float `{v}f0`"),
            Tok::Newline => "newline".into(),
            Tok::Eof => "end of input".into(),
            Tok::Op(s) => format!("`{s}`"),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Function => "function",
            Tok::End => "end",
            Tok::If => "if",
            Tok::Elseif => "elseif",
            Tok::Else => "else",
            Tok::While => "while",
            Tok::For => "for",
            Tok::Return => "return",
            Tok::Record => "record",
            Tok::Mutable => "mutable",
            Tok::True => "true",
            Tok::False => "false",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::ColonColon => "::",
            Tok::Colon => ":",
            Tok::Assign => "=",
            Tok::Not => "!",
            Tok::Semi => ";",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "function" => Tok::Function,
        "end" => Tok::End,
        "if" => Tok::If,
        "elseif" => Tok::Elseif,
        "else" => Tok::Else,
        "while" => Tok::While,
        "for" => Tok::For,
        "return" => Tok::Return,
        "record" => Tok::Record,
        "mutable" => Tok::Mutable,
        "true" => Tok::True,
        "false" => Tok::False,
        _ => return None,
    })
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    while i < chars.len() {
        let c = chars[i];
        let span = Span::new(line, col);
        let start = i;
        if c == '\n' {
            out.push(Token { tok: Tok::Newline, span });
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            keyword(&word).unwrap_or(Tok::Ident(word))
        } else if c.is_ascii_digit() {
            lex_number(&chars, &mut i, span)?
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let (tok, len) = match two.as_str() {
                "::" => (Tok::ColonColon, 2),
                "==" => (Tok::Op("=="), 2),
                "!=" => (Tok::Op("!="), 2),
                "<=" => (Tok::Op("<="), 2),
                ">=" => (Tok::Op(">="), 2),
                "&&" => (Tok::Op("&&"), 2),
                "||" => (Tok::Op("||"), 2),
                _ => {
                    let t = match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '[' => Tok::LBracket,
                        ']' => Tok::RBracket,
                        '{' => Tok::LBrace,
                        '}' => Tok::RBrace,
                        ',' => Tok::Comma,
                        '.' => Tok::Dot,
                        ':' => Tok::Colon,
                        '=' => Tok::Assign,
                        ';' => Tok::Semi,
                        '!' => Tok::Not,
                        '+' => Tok::Op("+"),
                        '-' => Tok::Op("-"),
                        '*' => Tok::Op("*"),
                        '/' => Tok::Op("/"),
                        '%' => Tok::Op("%"),
                        '^' => Tok::Op("^"),
                        '<' => Tok::Op("<"),
                        '>' => Tok::Op(">"),
                        other => {
                            return Err(Diagnostic::new(span, format!("unexpected character `{other}`")))
                        }
                    };
                    (t, 1)
                }
            };
            i += len;
            tok
        };
        col += (i - start) as u32;
        out.push(Token { tok, span });
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span::new(line, col),
    });
    Ok(out)
}

fn lex_number(chars: &[char], i: &mut usize, span: Span) -> Result<Tok, Diagnostic> {
    let start = *i;
    let digits = |i: &mut usize| {
        while *i < chars.len() && (chars[*i].is_ascii_digit() || chars[*i] == '_') {
            *i += 1;
        }
    };
    digits(i);
    let mut is_float = false;
    if *i + 1 < chars.len() && chars[*i] == '.' && chars[*i + 1].is_ascii_digit() {
        is_float = true;
        *i += 1;
        digits(i);
    }
    let mut f32_exp = false;
    if *i < chars.len() && (chars[*i] == 'e' || chars[*i] == 'f') {
        let marker = chars[*i];
        let mut j = *i + 1;
        if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
            j += 1;
        }
        if j < chars.len() && chars[j].is_ascii_digit() {
            is_float = true;
            f32_exp = marker == 'f';
            *i = j;
            digits(i);
        }
    }
    let text: String = chars[start..*i].iter().filter(|c| **c != '_').collect();
    if !is_float && chars[*i..].starts_with(&['i', '3', '2']) {
        *i += 3;
        return text
            .parse::<i32>()
            .map(Tok::Int32)
            .map_err(|_| Diagnostic::new(span, format!("integer literal `{text}` out of range")));
    }
    if is_float {
        let normalized = if f32_exp { text.replacen('f', "e", 1) } else { text.clone() };
        let v: f64 = normalized
            .parse()
            .map_err(|_| Diagnostic::new(span, format!("malformed float literal `{text}`")))?;
        Ok(if f32_exp { Tok::Float32(normalized.parse::<f32>().unwrap_or(v as f32)) } else { Tok::Float(v) })
    } else {
        text.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| Diagnostic::new(span, format!("integer literal `{text}` out of range")))
    }
}
