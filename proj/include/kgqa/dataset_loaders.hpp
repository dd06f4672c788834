#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kgqa/eval_harness.hpp"

namespace kgqa {

enum class Dataset { webqsp, metaqa3, cwq, lcquad1, lcquad2, kqapro };

const char* dataset_name(Dataset d);
std::optional<Dataset> dataset_from_name(std::string_view name);

// Loads a dataset file in its native layout. Schema mismatches raise a
// DataError naming the offending record and field.
//
//   webqsp   WebQSP JSON ({"Questions": [...]}, first parse used)
//   metaqa3  qa text lines "question with [topic]<TAB>ans1|ans2"; the
//            sidecar *_qtype.txt supplies extras["path_type"]
//   cwq      ComplexWebQuestions JSON array (answers + aliases)
//   lcquad1  LC-QuAD v1 JSON array (corrected_question, sparql_query)
//   lcquad2  LC-QuAD v2 JSON array ("question" key only; NNQT/paraphrase
//            variants land in extras and are never consumed by pipelines)
//   kqapro   KQAPro JSON array (question, sparql, answer, choices)
std::vector<QuestionInstance> load_dataset(Dataset dataset, const std::string& path);

}  // namespace kgqa
