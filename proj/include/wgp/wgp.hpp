#pragma once

#include "wgp/dop.hpp"
#include "wgp/error.hpp"
#include "wgp/eval.hpp"
#include "wgp/lattice.hpp"
#include "wgp/lm.hpp"
#include "wgp/pipeline.hpp"
#include "wgp/robust.hpp"
#include "wgp/treebank.hpp"
#include "wgp/update.hpp"
