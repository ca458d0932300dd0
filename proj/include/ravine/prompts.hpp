#pragma once

#include "ravine/error.hpp"

#include <map>
#include <string>
#include <string_view>

namespace ravine::prompts {

// Templates are kept byte-for-byte; placeholders are `{name}`.

inline constexpr std::string_view kNuggetCreation =
    "Given a query and a list of possibly relevant context, generate a list of atomic nuggets of information from "
    "the context, so they best provide the information required for the query. Each generated nugget should be a "
    "complete and unique statement of a fact from the context (a sentence of about 10 words). A nugget should "
    "include a clear subject, verb, and object, and should avoid using pronouns such a \"it\". A nugget is not "
    "simply a salient statement within the context, but also one that helps answer the query. Return only the list "
    "of nuggets in a markdown-style python code-block, and place nuggets in pythonic list format. Ensure the "
    "nuggets list has at most {creator_max_nuggets} nuggets (can be less or empty). Return only the most vital "
    "nuggets.\n"
    "Search Query: {query}\n"
    "Context:\n"
    "{context}\n"
    "Search Query: {query}\n"
    "List in the form [\"a\", \"b\", ...] and a and b are strings with no mention of \". If no complete statement "
    "that is valuable to the query can be found in the context, do not generate low-quality nuggets, and return [] "
    "directly. Do not explain and make sure there is no redundant information.\n"
    "Nugget List:";

inline constexpr std::string_view kNuggetMerging =
    "Given a query, please merge its list of atomic nuggets (if necessary) by combining similar nuggets, and return "
    "a new list of atomic nuggets. A nugget refers to a semantically complete and unique statement of a fact (a "
    "sentence of around 10 words) that helps answer the query.\n"
    "Query: {query}\n"
    "Nuggets List:\n"
    "{nuggets_list}\n"
    "Your output should be: one nugget per line, and for each nugget, indicate which original nuggets were merged "
    "(by listing their indices). Example: nugget_text [1, 2, ...]\n"
    "If there are no similar nuggets in the list, indicating that no merging is needed, simply return: [NO NEED]. "
    "Make sure there is no redundant information.";

inline constexpr std::string_view kNuggetScoring =
    "Based on the query, label each of the {num_nuggets} nuggets either a vital or okay based on the following "
    "criteria. Vital nuggets represent concepts that must be present in a \"good\" answer; on the other hand, okay "
    "nuggets contribute worthwhile information about the target but are not essential. Return the list of labels "
    "in a Pythonic list format (type: List[str]). The list should be in the same order as the input nuggets. Make "
    "sure to provide a label for each nugget.\n"
    "Search Query: {query}\n"
    "Nugget List: {nugget_list}\n"
    "Only return the list of labels (List[str]). Do not explain.\n"
    "Labels:";

inline constexpr std::string_view kNuggetAssignment =
    "Based on the query and passage, label each of the {num_nuggets} nuggets either as support, partial_support, "
    "or not_support using the following criteria. A nugget that is fully captured in the passage should be labeled "
    "as support. A nugget that is partially captured in the passage should be labeled as partial_support. If the "
    "nugget is not captured at all, label it as not_support. Return the list of labels in a Pythonic list format "
    "(type: List[str]). The list should be in the same order as the input nuggets. Make sure to provide a label "
    "for each nugget. \n"
    "Search Query: {query}\n"
    "Passage:\n"
    "{context}\n"
    "Nugget List: {nugget_texts}\n"
    "Only return the list of labels (List[str]). Do not explain.\n"
    "Labels:\"";

inline constexpr std::string_view kAgentSearch =
    "Your task is to generate a report to answer the question provided. During this process, you need to do the "
    "following:\n"
    "1. You primarily respond in English.\n"
    "2. You can choose to call known tools and generate the correct parameters according to the tool description.\n"
    "3. You can generate any content that helps you complete the task during the intermediate iteration process "
    "according to your needs.\n"
    "4. When you consider the task complete, the last generated content is a long-form report that covers much "
    "useful information for the given question.\n"
    "5. In each iteration, you get to choose what to do next (call the search tool or complete the task and "
    "generate a final report), and you do not require assistance or response from users.\n"
    "\n"
    "You need to meet the following requirements for your final long-form report:\n"
    "1. Your long-form report needs to be in markdown format.\n"
    "2. Your long-form report needs to be logically clear, comprehensive in key points, and able to effectively "
    "address the given question.\n"
    "3. Your long-form report needs to include citations of the websites retrieved through external search tools.\n"
    "4. In the final output, your report must be enclosed within <report> and </report>, that is, only the content "
    "between these tags will be evaluated.\n"
    "\n"
    "The citations in your final long-form report need to meet the following requirements:\n"
    "1. Citations can only appear at the end of a sentence.\n"
    "2. Citations must follow the Markdown format, including the website's title and URL, and should be enclosed "
    "in brackets. For example: ([title](url)).\n"
    "3. Multiple citations can appear at the same time in one position, separated by semicolons. For example: "
    "([title1](url1); [title2](url2); [title3](url3)).\n"
    "4. A complete statement may contain one or more sentences. Please try to generate citations after the entire "
    "statement is presented.\n"
    "5. Do not list the cited websites at the end of the report to avoid unnecessary token usage.\n"
    "\n"
    "Question: {question}";

/// Single-pass substitution: values are never rescanned, so braces inside a
/// query cannot trigger further replacement. Unknown placeholders throw.
inline std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& values)
{
    std::string out;
    out.reserve(tmpl.size() + 256);
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                std::string_view name = tmpl.substr(i + 1, close - i - 1);
                bool ident = !name.empty();
                for (char c : name)
                    ident = ident && ((c >= 'a' && c <= 'z') || c == '_');
                if (ident) {
                    auto it = values.find(std::string(name));
                    if (it == values.end())
                        throw Error("no value for prompt placeholder {" + std::string(name) + "}");
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

} // namespace ravine::prompts
