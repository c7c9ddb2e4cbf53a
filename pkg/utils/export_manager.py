import json
import os
from datetime import datetime
from io import BytesIO

import pandas as pd

from utils.errors import ParameterError
from utils.logger import get_logger

logger = get_logger(__name__)


class ExportManager:
    """Manages export of the lambda-sweep summary in various formats"""

    def __init__(self):
        self.supported_formats = ['csv', 'json', 'xlsx']

    def export_sweep_summary(self, summary: pd.DataFrame, path: str) -> str:
        """
        Write a sweep summary table; the format follows the file extension

        Args:
            summary: One row per lambda (see ensemble_pso.sweep_summary)
            path: Target .csv, .json or .xlsx path

        Returns:
            The written path
        """
        fmt = os.path.splitext(path)[1].lower().lstrip('.')
        if fmt not in self.supported_formats:
            raise ParameterError(f"Unsupported export format '{fmt}' "
                                 f"(expected {', '.join(self.supported_formats)})")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

        if fmt == 'csv':
            summary.to_csv(path, index=False)
        elif fmt == 'json':
            with open(path, 'w', encoding='utf-8') as f:
                f.write(self._create_json_export(summary))
        else:
            with open(path, 'wb') as f:
                f.write(self._create_excel_export(summary))
        logger.debug(f"Exported sweep summary ({len(summary)} rows) to {path}")
        return path

    def _create_json_export(self, summary: pd.DataFrame) -> str:
        """JSON records; NaN cells become null"""
        records = json.loads(summary.to_json(orient='records'))
        return json.dumps({'rows': records}, indent=2, ensure_ascii=False)

    def _create_excel_export(self, summary: pd.DataFrame) -> bytes:
        """Workbook with the summary sheet and a metadata sheet"""
        output = BytesIO()
        with pd.ExcelWriter(output, engine='openpyxl') as writer:
            summary.to_excel(writer, sheet_name='Sweep', index=False)

            best_lambda = None
            if 'val_f1_macro' in summary and summary['val_f1_macro'].notna().any():
                best_lambda = float(summary.loc[summary['val_f1_macro'].idxmax(), 'lambda'])
            metadata = {
                'Export_Type': 'Lambda Sweep Summary',
                'Generated_At': datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
                'Runs': len(summary),
                'Best_Val_Lambda': best_lambda,
            }
            pd.DataFrame([metadata]).to_excel(writer, sheet_name='Metadata', index=False)
        return output.getvalue()
