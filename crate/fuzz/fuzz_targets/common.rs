use fairgen_core::data::TableSchema;

pub const SCHEMA: &str = r#"
positive_label = "yes"
label_column = "y"

[[features]]
name = "g"
kind = "categorical"
categories = ["A", "B"]
protected = true

[[features]]
name = "x"
kind = "numeric"
"#;

pub fn schema() -> TableSchema {
    TableSchema::from_toml(SCHEMA).expect("fixed schema parses")
}
