#pragma once

#include <string>
#include <string_view>

namespace crossx::fault {

// Deliberate defects for exercising the verification suites. A named fault
// corrupts one backward rule until cleared. Never set outside of tests.
void inject(std::string_view name);
void clear();
bool active(std::string_view name);

}  // namespace crossx::fault
