// Splits a cited report into blocks and scores it against two nuggets with
// the rule-based mock judge.

#include "ravine/report_scorer.hpp"

#include <cstdio>
#include <iostream>

int main()
{
    using namespace ravine;
    Corpus corpus;
    corpus.add({"d1", "https://example.org/a", "A", "", "Caffeine blocks adenosine receptors."});
    corpus.add({"d2", "https://example.org/b", "B", "", "Caffeine has a half life of five hours."});

    std::vector<Nugget> nuggets(2);
    nuggets[0] = {"q1", "Caffeine blocks adenosine receptors", {"d1"}, NuggetLabel::vital};
    nuggets[1] = {"q1", "Caffeine half life is five hours", {"d2"}, NuggetLabel::okay};

    const std::string report = "Caffeine blocks adenosine receptors. ([A](https://example.org/a)) "
                               "Its half life is about five hours. ([A](https://example.org/a); "
                               "[B](https://example.org/b))";
    for (const auto& b : split_into_blocks(report)) {
        std::cout << "block " << b.index << ": \"" << b.text << "\"";
        for (const auto& c : b.citations)
            std::cout << " -> " << c.url;
        std::cout << '\n';
    }

    MockJudge judge;
    auto scores = score_report("caffeine effects", report, nuggets, judge, {"d1", "d2"}, corpus_resolver(corpus));
    std::printf("completeness %.4f\ncitation recall %.4f\ncitation precision %.4f\n", scores.completeness,
                scores.cite_recall.value_or(0.0), scores.cite_precision.value_or(0.0));
    return 0;
}
