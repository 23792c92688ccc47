//! Reader prompt templates.

use alloc::format;
use alloc::string::String;

use super::ReaderError;
use crate::corpus::QueryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTemplate {
    /// Four-option multiple choice.
    Mmlu,
    /// Short open question.
    PopQa,
}

pub fn render_prompt(
    template: PromptTemplate,
    query: &QueryRecord,
    choices: Option<&[String]>,
) -> Result<String, ReaderError> {
    match template {
        PromptTemplate::PopQa => Ok(format!("Q: {} A:", query.text)),
        PromptTemplate::Mmlu => {
            let choices = choices.unwrap_or(&[]);
            if choices.len() != 4 {
                return Err(ReaderError::ChoiceCount(choices.len()));
            }
            Ok(format!(
                "Here's a problem to solve: {}\n\
                 Among the 4 following options, which is the correct answer?\n\
                 - A: {}\n- B: {}\n- C: {}\n- D: {}",
                query.text, choices[0], choices[1], choices[2], choices[3]
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec::Vec;

    #[test]
    fn popqa_template() {
        let q = QueryRecord::new("q", "Who wrote X?");
        assert_eq!(render_prompt(PromptTemplate::PopQa, &q, None).unwrap(), "Q: Who wrote X? A:");
    }

    #[test]
    fn mmlu_template() {
        let q = QueryRecord::new("q", "What is 2+2?");
        let choices: Vec<String> = ["3", "4", "5", "6"].iter().map(|s| s.to_string()).collect();
        let p = render_prompt(PromptTemplate::Mmlu, &q, Some(&choices)).unwrap();
        assert_eq!(
            p,
            "Here's a problem to solve: What is 2+2?\n\
             Among the 4 following options, which is the correct answer?\n\
             - A: 3\n- B: 4\n- C: 5\n- D: 6"
        );
        assert_eq!(render_prompt(PromptTemplate::Mmlu, &q, Some(&choices[..3])), Err(ReaderError::ChoiceCount(3)));
    }
}
