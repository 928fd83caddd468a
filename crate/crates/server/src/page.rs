//! Minimal patient-facing HTML: the questionnaire form and the receipt.

use std::fmt::Write as _;

use homewatch_core::model::{ItemKind, QuestionnaireDefinition};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const HEAD: &str = "<!doctype html>\n<html lang=\"en\"><head><meta charset=\"utf-8\">\
<meta name=\"viewport\" content=\"width=device-width, initial-scale=1\"><title>Daily check-in</title></head><body>\n";

pub fn questionnaire(def: &QuestionnaireDefinition, action: &str) -> String {
    let mut html = String::from(HEAD);
    let _ = writeln!(html, "<h1>Daily check-in</h1>\n<form method=\"post\" action=\"{}\">", escape(action));
    for item in def.items() {
        let key = escape(&item.key);
        let label = escape(&item.label);
        let required = if item.required { " required" } else { "" };
        let _ = write!(html, "<p><label for=\"{key}\">{label}</label><br>");
        match &item.kind {
            ItemKind::Numeric { min, max, unit } => {
                let _ = write!(
                    html,
                    "<input id=\"{key}\" name=\"{key}\" type=\"number\" step=\"0.1\" min=\"{min}\" max=\"{max}\"{required}> {}",
                    escape(unit)
                );
            }
            ItemKind::Scale => {
                let _ = write!(html, "<input id=\"{key}\" name=\"{key}\" type=\"number\" step=\"1\" min=\"0\" max=\"10\"{required}>");
            }
            ItemKind::Boolean => {
                let _ = write!(
                    html,
                    "<select id=\"{key}\" name=\"{key}\"{required}><option value=\"\"></option>\
                     <option value=\"no\">No</option><option value=\"yes\">Yes</option></select>"
                );
            }
        }
        html.push_str("</p>\n");
    }
    html.push_str("<p><button type=\"submit\">Send</button></p>\n</form>\n</body></html>\n");
    html
}

pub fn receipt(message: Option<&str>) -> String {
    let mut html = String::from(HEAD);
    html.push_str("<h1>Thank you</h1>\n<p>Your answers have been sent to the monitoring team.</p>\n");
    if let Some(m) = message {
        let _ = writeln!(html, "<p>{}</p>", escape(m));
    }
    html.push_str("</body></html>\n");
    html
}

pub fn problem(message: &str) -> String {
    format!("{HEAD}<h1>This link cannot be used</h1>\n<p>{}</p>\n</body></html>\n", escape(message))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn form_has_one_field_per_item_and_escapes() {
        let def = QuestionnaireDefinition::default_set();
        let html = questionnaire(&def, "/q/a\"b");
        for item in def.items() {
            assert!(html.contains(&format!("name=\"{}\"", item.key)));
        }
        assert!(html.contains("action=\"/q/a&quot;b\""));
        assert!(problem("<x>").contains("&lt;x&gt;"));
    }
}
