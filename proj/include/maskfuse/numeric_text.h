#ifndef MASKFUSE_NUMERIC_TEXT_H_
#define MASKFUSE_NUMERIC_TEXT_H_

#include <string>
#include <string_view>
#include <vector>

namespace maskfuse {

// Shortest decimal text that parses back to the identical double.
std::string FormatDouble(double value);
// Throws FormatError on trailing garbage or empty input.
double ParseDouble(std::string_view text);
long long ParseInteger(std::string_view text);

// Splits one CSV line on commas (no quoting; none of our files need it).
std::vector<std::string_view> SplitCsvLine(std::string_view line);

}  // namespace maskfuse

#endif  // MASKFUSE_NUMERIC_TEXT_H_
