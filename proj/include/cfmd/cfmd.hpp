#pragma once

// Umbrella header.

#include "cfmd/bridge_client.hpp"
#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/harness.hpp"
#include "cfmd/io.hpp"
#include "cfmd/metrics.hpp"
#include "cfmd/news_corpus.hpp"
#include "cfmd/ngram_lm.hpp"
#include "cfmd/perturb.hpp"
#include "cfmd/plot.hpp"
#include "cfmd/provider.hpp"
#include "cfmd/raters.hpp"
#include "cfmd/scoring.hpp"
#include "cfmd/supervised.hpp"
#include "cfmd/tokenizer.hpp"
