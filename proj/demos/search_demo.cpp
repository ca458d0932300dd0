// Builds a lexical index over a small in-memory corpus and runs the two
// agent tools against it.

#include "ravine/search_index.hpp"
#include "ravine/tools.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    using namespace ravine;
    Corpus corpus;
    corpus.add({"d1", "https://example.org/pie", "Apple Pie", "Crust\nFilling",
                "Bake the apple pie for fifty minutes until the crust is golden."});
    corpus.add({"d2", "https://example.org/banana", "Banana Bread", "Loaf",
                "Ripe bananas make the bread moist."});
    corpus.add({"d3", "https://example.org/orchard", "Orchards", "",
                "Apple orchards need cold winters to set fruit."});

    auto index = LexicalIndex::build(corpus);
    ToolBox tools(corpus, index, 80);

    std::string query = argc > 1 ? argv[1] : "apple pie";
    auto serp = tools.execute_search(query, 5);
    std::cout << "web_search(\"" << query << "\")\n" << serp.payload << "\n\n";

    auto urls = parse_serp_urls(serp.payload);
    if (!urls.empty()) {
        auto page = tools.execute_fetch(urls.front());
        std::cout << "web_fetch(\"" << urls.front() << "\")\n" << page.payload << '\n';
    }
    return 0;
}
