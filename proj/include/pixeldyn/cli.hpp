#pragma once

namespace pixeldyn {

int cli_main(int argc, char** argv);

}  // namespace pixeldyn

#include "pixeldyn/cli_impl.hpp"
