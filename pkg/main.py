#!/usr/bin/env python3
"""
FLGSR Recovery - Main Entry Point
グループ化キャップ正則化による低ランク行列復元・画像修復ツール
"""

import sys
from pathlib import Path
from loguru import logger
from dotenv import load_dotenv

# Load environment variables from .env file (FLGSR_THREADS など)
load_dotenv()

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from app.cli.commands import main as cli_main


def main():
    """メイン実行関数"""
    try:
        exit_code = cli_main(sys.argv[1:])
        logger.debug(f"flgsr exited with code {exit_code}")
        return exit_code

    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 1

    except Exception as e:
        logger.opt(exception=True).critical(f"Fatal error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
