use super::ast::{Block, Body, HclExpr, HclProgram};
use crate::iir::decimal_text;

pub fn escape_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    let chars: Vec<char> = s.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '$' if chars.get(i + 1) == Some(&'{') => out.push_str("$$"),
            c => out.push(*c),
        }
    }
    out.push('"');
    out
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && s != "true"
        && s != "false"
}

pub fn print_expr(e: &HclExpr) -> String {
    match e {
        HclExpr::String(s) => escape_string(s),
        HclExpr::Int(i) => i.to_string(),
        HclExpr::Decimal(d) => decimal_text(d),
        HclExpr::Bool(b) => b.to_string(),
        HclExpr::List(items) => {
            format!("[{}]", items.iter().map(print_expr).collect::<Vec<_>>().join(", "))
        }
        HclExpr::Map(entries) if entries.is_empty() => "{}".to_owned(),
        HclExpr::Map(entries) => {
            let items: Vec<String> = entries
                .iter()
                .map(|(k, v)| {
                    let key = if is_ident(k) { k.clone() } else { escape_string(k) };
                    format!("{key} = {}", print_expr(v))
                })
                .collect();
            format!("{{ {} }}", items.join(", "))
        }
        HclExpr::Reference(parts) => parts.join("."),
    }
}

fn print_body(body: &Body, indent: usize, out: &mut String) {
    if body.attributes.is_empty() && body.blocks.is_empty() {
        out.push_str("{}\n");
        return;
    }
    out.push_str("{\n");
    let pad = "  ".repeat(indent + 1);
    for a in &body.attributes {
        out.push_str(&format!("{pad}{} = {}\n", a.name, print_expr(&a.value)));
    }
    for b in &body.blocks {
        out.push_str(&format!("{pad}{} ", b.name));
        print_body(&b.body, indent + 1, out);
    }
    out.push_str(&"  ".repeat(indent));
    out.push_str("}\n");
}

pub fn print_block(block: &Block) -> String {
    let mut out = block.block_type.keyword().to_owned();
    for l in &block.labels {
        out.push(' ');
        out.push_str(&escape_string(l));
    }
    out.push(' ');
    print_body(&block.body, 0, &mut out);
    out
}

/// Canonical text: two-space indentation, one attribute per line, nested blocks
/// after attributes, a blank line between top-level blocks, LF endings.
pub fn print(program: &HclProgram) -> String {
    program.blocks.iter().map(print_block).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn empty_program_prints_empty() {
        assert_eq!(print(&HclProgram::default()), "");
    }

    #[test]
    fn canonical_layout() {
        let p = parse(
            "resource \"security_group\" \"sg\" { ingress { port = 22 } vpc_id = vpc.main.id tags = {a=1 \"b c\"=\"x\"} }\nprovider \"aws\" {}",
        )
        .unwrap();
        let text = print(&p);
        assert_eq!(
            text,
            "resource \"security_group\" \"sg\" {\n  vpc_id = vpc.main.id\n  tags = { a = 1, \"b c\" = \"x\" }\n  ingress {\n    port = 22\n  }\n}\n\nprovider \"aws\" {}\n"
        );
        assert_eq!(parse(&text).unwrap(), p);
        assert_eq!(print(&parse(&text).unwrap()), text);
    }

    #[test]
    fn strings_round_trip() {
        for s in ["plain", "q\"uote", "back\\slash", "line\nbreak", "${not}", "$${x}", "$", "tab\t"] {
            let p = parse(&format!("variable \"v\" {{ default = {} }}", escape_string(s))).unwrap();
            assert_eq!(p.blocks[0].body.get("default"), Some(&HclExpr::str(s)), "{s}");
        }
    }

    #[test]
    fn decimals_keep_their_shape() {
        let p = parse("variable \"v\" { default = [2.0, 7.50] }").unwrap();
        let text = print(&p);
        assert!(text.contains("[2.0, 7.50]"), "{text}");
    }
}
