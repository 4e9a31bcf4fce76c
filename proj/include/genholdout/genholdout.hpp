#pragma once

// Convenience umbrella for the whole library.

#include "genholdout/analysts.hpp"
#include "genholdout/cli.hpp"
#include "genholdout/core.hpp"
#include "genholdout/errors.hpp"
#include "genholdout/io.hpp"
#include "genholdout/mechanisms.hpp"
#include "genholdout/rng.hpp"
#include "genholdout/simharness.hpp"
#include "genholdout/testkit.hpp"
